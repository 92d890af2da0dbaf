//! Electron ray tracing through a solved potential.
//!
//! Motion is integrated in a meridional plane of the axisymmetric field,
//! with `r` the signed transverse coordinate in that plane, so trajectories
//! may cross the axis. The integrator is kick-drift-kick leapfrog with an
//! adaptive step that keeps the per-step change of the total energy
//! `KE - e*phi` below a relative bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::constants::{electron_speed, kinetic_energy_ev, E_OVER_M};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::{ElectrodeId, Location, PotentialGrid};
use crate::geometry::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub x: f64,
    pub r: f64,
    pub vx: f64,
    pub vr: f64,
}

impl ParticleState {
    pub fn at_rest(x: f64, r: f64) -> Self {
        Self {
            t: 0.0,
            x,
            r,
            vx: 0.0,
            vr: 0.0,
        }
    }

    /// State at `(x, r)` moving along `(cos a, sin a)` with `ke_ev`.
    pub fn launched(x: f64, r: f64, angle: f64, ke_ev: f64) -> Self {
        let v = electron_speed(ke_ev);
        Self {
            t: 0.0,
            x,
            r,
            vx: v * angle.cos(),
            vr: v * angle.sin(),
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vr)
    }

    pub fn kinetic_energy_ev(&self) -> f64 {
        kinetic_energy_ev(self.speed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Crossed the downstream exit plane.
    Transmitted,
    /// Struck an electrode or a grounded wall.
    Hit(ElectrodeId),
    /// Left through an open (symmetry) boundary.
    Exited,
    StepLimit,
    /// Reached the requested end time.
    TimeLimit,
}

impl Termination {
    pub fn label(&self, grid: &PotentialGrid) -> String {
        match self {
            Termination::Transmitted => "transmitted".into(),
            Termination::Hit(id) => format!("hit:{}", grid.problem.electrodes[id.0 as usize].name),
            Termination::Exited => "exited".into(),
            Termination::StepLimit => "step_limit".into(),
            Termination::TimeLimit => "time_limit".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    pub termination: Termination,
    /// `KE - phi` in eV at the start (the conserved quantity).
    pub total_energy_ev: f64,
    /// Potential (V) at each stored state.
    pub potentials: Vec<f64>,
    /// Largest `|E(t) - E(0)|` over every integration step, relative to
    /// the energy scale.
    pub max_energy_error: f64,
    pub energy_scale_ev: f64,
    pub steps: usize,
    /// Kinetic energy exceeded 10 keV somewhere.
    pub relativistic: bool,
}

impl Trajectory {
    pub fn last(&self) -> &ParticleState {
        self.states.last().expect("trajectory has at least its start state")
    }

    /// Relative energy error at each stored state.
    pub fn energy_errors(&self) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.potentials)
            .map(|(s, &phi)| ((s.kinetic_energy_ev() - phi) - self.total_energy_ev).abs() / self.energy_scale_ev)
            .collect()
    }

    /// CSV with columns `t_s,x_m,r_m,vx_m_per_s,vr_m_per_s,ke_eV`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_s", "x_m", "r_m", "vx_m_per_s", "vr_m_per_s", "ke_eV"])?;
        for s in &self.states {
            out.serialize((s.t, s.x, s.r, s.vx, s.vr, s.kinetic_energy_ev()))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Upper bound on the time step (s).
    pub dt_max: f64,
    pub step_limit: usize,
    /// Bound on the relative energy change of a single step.
    pub step_energy_tol: f64,
    /// Stop (with `TimeLimit`) once this much time has elapsed.
    pub max_time: Option<f64>,
    /// Store every n-th accepted step (the first and last state are
    /// always stored).
    pub store_every: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            dt_max: 1e-11,
            step_limit: 2_000_000,
            step_energy_tol: 1e-10,
            max_time: None,
            store_every: 1,
        }
    }
}

struct Sample {
    phi: f64,
    ax: f64,
    ar: f64,
}

fn sample(grid: &PotentialGrid, x: f64, r: f64) -> Sample {
    // force on the electron is +e grad(phi)
    let (phi, gx, gr) = grid.sample(x, r);
    Sample {
        phi,
        ax: E_OVER_M * gx,
        ar: E_OVER_M * gr,
    }
}

fn classify(loc: Location) -> Option<Termination> {
    match loc {
        Location::Vacuum => None,
        Location::Electrode(id) => Some(Termination::Hit(id)),
        Location::PastExit => Some(Termination::Transmitted),
        Location::Outside(Some(id)) => Some(Termination::Hit(id)),
        Location::Outside(None) => Some(Termination::Exited),
    }
}

/// Kick-drift-kick step. Returns the drift position's location if it left
/// the vacuum, otherwise the new state and its sample.
fn kdk(
    grid: &PotentialGrid,
    s: &ParticleState,
    a: &Sample,
    dt: f64,
) -> std::result::Result<(ParticleState, Sample), Termination> {
    let vx = s.vx + 0.5 * dt * a.ax;
    let vr = s.vr + 0.5 * dt * a.ar;
    let x = s.x + dt * vx;
    let r = s.r + dt * vr;
    if let Some(t) = classify(grid.locate(x, r)) {
        return Err(t);
    }
    let b = sample(grid, x, r);
    Ok((
        ParticleState {
            t: s.t + dt,
            x,
            r,
            vx: vx + 0.5 * dt * b.ax,
            vr: vr + 0.5 * dt * b.ar,
        },
        b,
    ))
}

pub fn integrate_trajectory(grid: &PotentialGrid, start: ParticleState, opts: &TraceOptions) -> Result<Trajectory> {
    if !(opts.dt_max > 0.0) {
        return Err(Error::domain("dt_max must be positive"));
    }
    if classify(grid.locate(start.x, start.r)).is_some() {
        return Err(Error::domain(format!(
            "start point (x = {:e} m, r = {:e} m) is not in vacuum",
            start.x, start.r
        )));
    }
    let h = grid.grid().h;
    let (vmin, vmax) = grid.voltage_bounds();
    let span = (vmax - vmin).abs();

    let mut a = sample(grid, start.x, start.r);
    let total = start.kinetic_energy_ev() - a.phi;
    let scale = if total.abs() > 1e-3 * span {
        total.abs()
    } else {
        span.max(start.kinetic_energy_ev()).max(1e-12)
    };
    let energy = |s: &ParticleState, phi: f64| s.kinetic_energy_ev() - phi;

    let mut states = vec![start];
    let mut potentials = vec![a.phi];
    let mut cur = start;
    let mut e_prev = total;
    let mut max_err: f64 = 0.0;
    let mut relativistic = start.kinetic_energy_ev() > 10e3;
    let mut dt = opts.dt_max;
    let mut steps = 0;
    let dt_floor = opts.dt_max * 1e-12;

    let termination = loop {
        if steps >= opts.step_limit {
            break Termination::StepLimit;
        }
        if let Some(tmax) = opts.max_time {
            if cur.t >= tmax * (1.0 - 1e-15) {
                break Termination::TimeLimit;
            }
        }
        // cell-crossing bound on the step
        let v = cur.speed();
        let acc = a.ax.hypot(a.ar);
        let mut bound = opts.dt_max;
        if v > 0.0 {
            bound = bound.min(0.25 * h / v);
        }
        if acc > 0.0 {
            bound = bound.min((0.5 * h / acc).sqrt());
        }
        if let Some(tmax) = opts.max_time {
            bound = bound.min(tmax - cur.t);
        }
        dt = (dt * 1.25).min(bound);

        let accepted = loop {
            match kdk(grid, &cur, &a, dt) {
                Ok((next, b)) => {
                    let e = energy(&next, b.phi);
                    if (e - e_prev).abs() <= opts.step_energy_tol * scale || dt <= dt_floor {
                        break Ok((next, b, e));
                    }
                    dt *= 0.5;
                }
                Err(t) => break Err(t),
            }
        };

        match accepted {
            Ok((next, b, e)) => {
                steps += 1;
                max_err = max_err.max((e - total).abs() / scale);
                relativistic |= next.kinetic_energy_ev() > 10e3;
                e_prev = e;
                cur = next;
                a = b;
                if steps % opts.store_every.max(1) == 0 {
                    states.push(cur);
                    potentials.push(a.phi);
                }
            }
            Err(term) => {
                // bisect the step length to land within h/100 of the surface
                let (mut lo, mut hi) = (0.0, dt);
                let mut inside: Option<(ParticleState, Sample)> = None;
                let mut outcome = term;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    match kdk(grid, &cur, &a, mid) {
                        Ok(ok) => {
                            lo = mid;
                            inside = Some(ok);
                        }
                        Err(t) => {
                            hi = mid;
                            outcome = t;
                        }
                    }
                    let speed = cur.speed() + hi * a.ax.hypot(a.ar);
                    if (hi - lo) * speed < 0.01 * h {
                        break;
                    }
                }
                if let Some((next, b)) = inside {
                    steps += 1;
                    max_err = max_err.max((energy(&next, b.phi) - total).abs() / scale);
                    cur = next;
                    a = b;
                }
                if states.last() != Some(&cur) {
                    states.push(cur);
                    potentials.push(a.phi);
                }
                break outcome;
            }
        }
    };
    if states.last() != Some(&cur) {
        states.push(cur);
        potentials.push(a.phi);
    }

    Ok(Trajectory {
        states,
        termination,
        total_energy_ev: total,
        potentials,
        max_energy_error: max_err,
        energy_scale_ev: scale,
        steps,
        relativistic,
    })
}

/// Kinetic energy (eV) at the end of a transmitted trajectory.
pub fn terminal_energy(trajectory: &Trajectory) -> Result<f64> {
    match trajectory.termination {
        Termination::Transmitted => Ok(trajectory.last().kinetic_energy_ev()),
        other => Err(Error::NotTransmitted(format!("{other:?}"))),
    }
}

/// Electron at rest just in front of the tip apex, on the axis.
pub fn apex_start(geometry: &Geometry) -> ParticleState {
    ParticleState::at_rest(geometry.config.tip_apex_x + 1e-6 * geometry.grid.h, 0.0)
}

/// Fan of launch points on a circle of `launch_radius` around the centre of
/// the apex cap, at polar angles spread evenly over `[0, half_angle]`, each
/// moving outward along the radius with `ke_ev`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaunchFan {
    pub count: usize,
    /// rad
    pub half_angle: f64,
    /// m
    pub launch_radius: f64,
    pub ke_ev: f64,
}

impl LaunchFan {
    pub fn starts(&self, geometry: &Geometry) -> Vec<ParticleState> {
        let c = geometry.apex_center();
        let n = self.count.max(1);
        (0..n)
            .map(|k| {
                let th = if n == 1 {
                    0.0
                } else {
                    self.half_angle * k as f64 / (n - 1) as f64
                };
                ParticleState::launched(
                    c + self.launch_radius * th.cos(),
                    self.launch_radius * th.sin(),
                    th,
                    self.ke_ev,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleSummary {
    pub schema_version: u32,
    pub total: usize,
    /// Count per termination label.
    pub counts: BTreeMap<String, usize>,
    /// Label and terminal kinetic energy (eV) per start, in input order.
    pub outcomes: Vec<(String, f64)>,
    pub max_energy_error: f64,
}

impl BundleSummary {
    pub fn count(&self, label: &str) -> usize {
        self.counts.get(label).copied().unwrap_or(0)
    }
}

pub fn classify_bundle(
    grid: &PotentialGrid,
    starts: &[ParticleState],
    opts: &TraceOptions,
    exec: Exec,
) -> Result<BundleSummary> {
    if starts.is_empty() {
        return Err(Error::domain("empty start list"));
    }
    let opts = TraceOptions {
        store_every: usize::MAX,
        ..*opts
    };
    let results = exec.map(starts, |s| integrate_trajectory(grid, *s, &opts));
    let mut counts = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(starts.len());
    let mut max_err: f64 = 0.0;
    for r in results {
        let t = r?;
        let label = t.termination.label(grid);
        *counts.entry(label.clone()).or_insert(0) += 1;
        outcomes.push((label, t.last().kinetic_energy_ev()));
        max_err = max_err.max(t.max_energy_error);
    }
    Ok(BundleSummary {
        schema_version: crate::SCHEMA_VERSION,
        total: starts.len(),
        counts,
        outcomes,
        max_energy_error: max_err,
    })
}
