//! Cathode-box geometry: field-emission tip, counter electrode (first
//! aperture) and grounded second aperture inside a grounded enclosure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::exec::Exec;
use crate::field::{self, Boundary, ElectrodeId, FieldProblem, GridSpec, PotentialGrid, Shape, SolveOptions};

pub const TIP: ElectrodeId = ElectrodeId(0);
pub const COUNTER: ElectrodeId = ElectrodeId(1);
pub const GROUND: ElectrodeId = ElectrodeId(2);

/// Geometry description, all lengths in metres.
///
/// Axial positions of the apertures and the tip are estimates read off a
/// to-scale drawing; they are configuration, not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Axial position where the tip wire begins.
    pub tip_shank_start_x: f64,
    pub tip_apex_x: f64,
    /// Apex radius of curvature. Not the physical ~50 nm: the far field
    /// does not depend on it.
    pub tip_radius: f64,
    pub wire_diameter: f64,
    /// Length of the conical section between the wire and the apex cap.
    pub tip_taper_length: f64,
    /// Upstream face of the counter electrode.
    pub aperture1_x: f64,
    /// Upstream face of the grounded aperture.
    pub aperture2_x: f64,
    pub aperture_thickness: f64,
    pub aperture_hole_diameter: f64,
    /// Radial clearance between the counter electrode and the enclosure.
    pub counter_wall_gap: f64,
    pub domain_length: f64,
    pub domain_radius: f64,
    /// Grid spacing.
    pub h: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            tip_shank_start_x: 0.5e-3,
            tip_apex_x: 2.0e-3,
            tip_radius: 2e-6,
            wire_diameter: 125e-6,
            tip_taper_length: 0.4e-3,
            aperture1_x: 3.0e-3,
            aperture2_x: 6.0e-3,
            aperture_thickness: 0.5e-3,
            aperture_hole_diameter: 2.5e-3,
            counter_wall_gap: 0.5e-3,
            domain_length: 10e-3,
            domain_radius: 4e-3,
            h: 25e-6,
        }
    }
}

impl GeometryConfig {
    /// All invariant violations, keyed by config name.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let lengths = [
            ("geometry_tip_shank_start_x", self.tip_shank_start_x),
            ("geometry_tip_apex_x", self.tip_apex_x),
            ("geometry_tip_radius", self.tip_radius),
            ("geometry_wire_diameter", self.wire_diameter),
            ("geometry_tip_taper_length", self.tip_taper_length),
            ("geometry_aperture1_x", self.aperture1_x),
            ("geometry_aperture2_x", self.aperture2_x),
            ("geometry_aperture_thickness", self.aperture_thickness),
            ("geometry_aperture_hole_diameter", self.aperture_hole_diameter),
            ("geometry_counter_wall_gap", self.counter_wall_gap),
            ("geometry_domain_length", self.domain_length),
            ("geometry_domain_radius", self.domain_radius),
            ("geometry_h", self.h),
        ];
        for (key, val) in lengths {
            if !(val.is_finite() && val > 0.0) {
                v.push(Violation::new(key, format!("must be a positive length, got {val}")));
            }
        }
        if !v.is_empty() {
            return v;
        }

        if self.tip_apex_x >= self.aperture1_x {
            v.push(Violation::new(
                "geometry_tip_apex_x",
                "tip apex must lie upstream of aperture 1",
            ));
        }
        if self.aperture1_x >= self.aperture2_x {
            v.push(Violation::new(
                "geometry_aperture2_x",
                "aperture 2 must lie downstream of aperture 1",
            ));
        } else if self.aperture1_x + self.aperture_thickness >= self.aperture2_x {
            v.push(Violation::new("geometry_aperture_thickness", "apertures overlap"));
        }
        if self.aperture2_x + self.aperture_thickness >= self.domain_length {
            v.push(Violation::new(
                "geometry_domain_length",
                "aperture 2 must end inside the domain",
            ));
        }
        if self.tip_shank_start_x < 2.0 * self.h {
            v.push(Violation::new(
                "geometry_tip_shank_start_x",
                "tip wire must clear the upstream wall by two cells",
            ));
        }
        if self.tip_shank_start_x + self.tip_taper_length >= self.tip_apex_x {
            v.push(Violation::new("geometry_tip_taper_length", "taper longer than the tip"));
        }
        if self.tip_radius >= 0.5 * self.wire_diameter {
            v.push(Violation::new(
                "geometry_tip_radius",
                "apex radius must be smaller than the wire radius",
            ));
        }
        if self.tip_radius >= self.tip_taper_length {
            v.push(Violation::new("geometry_tip_radius", "apex cap longer than the taper"));
        }
        if self.h > self.aperture_hole_diameter / 10.0 {
            v.push(Violation::new(
                "geometry_h",
                "grid spacing must resolve the aperture hole (h <= hole diameter / 10)",
            ));
        }
        let hole_r = 0.5 * self.aperture_hole_diameter;
        if 0.5 * self.wire_diameter >= hole_r {
            v.push(Violation::new(
                "geometry_wire_diameter",
                "wire wider than the aperture hole",
            ));
        }
        if hole_r + self.counter_wall_gap + self.h >= self.domain_radius {
            v.push(Violation::new(
                "geometry_aperture_hole_diameter",
                "aperture hole does not fit in the domain radius",
            ));
        }
        if self.counter_wall_gap < 2.0 * self.h {
            v.push(Violation::new(
                "geometry_counter_wall_gap",
                "counter electrode must clear the wall by two cells",
            ));
        }
        if let Err(e) = GridSpec::covering(self.domain_length, self.domain_radius, self.h) {
            v.push(Violation::new("geometry_h", e.to_string()));
        }
        v
    }
}

/// A validated geometry with its rasterized electrode mask.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub config: GeometryConfig,
    pub grid: GridSpec,
    pub mask: Vec<Option<ElectrodeId>>,
}

/// Electrode potentials (V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeVoltages {
    /// Tip potential; negative in normal operation.
    pub u_sat: f64,
    /// Counter electrode (first aperture).
    pub u_c: f64,
    /// Second aperture and enclosure; always 0.
    pub u_ground: f64,
}

impl ElectrodeVoltages {
    pub fn new(u_sat: f64, u_c: f64) -> Self {
        Self {
            u_sat,
            u_c,
            u_ground: 0.0,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !self.u_sat.is_finite() {
            v.push(Violation::new("voltages_u_sat", "must be finite"));
        }
        if !self.u_c.is_finite() {
            v.push(Violation::new("voltages_u_c", "must be finite"));
        }
        if self.u_ground != 0.0 {
            v.push(Violation::new("voltages_u_ground", "ground reference must be 0 V"));
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.u_sat.abs().max(self.u_c.abs()).max(self.u_ground.abs())
    }
}

impl Default for ElectrodeVoltages {
    fn default() -> Self {
        Self::new(-1600.0, 200.0)
    }
}

pub fn build_geometry(config: &GeometryConfig) -> Result<Geometry> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(Error::Invalid(v));
    }
    let grid = GridSpec::covering(config.domain_length, config.domain_radius, config.h)?;
    let mut g = Geometry {
        config: config.clone(),
        grid,
        mask: Vec::new(),
    };
    g.mask = g.problem(&ElectrodeVoltages::default()).rasterize()?;
    Ok(g)
}

impl Geometry {
    pub fn tip_shape(&self) -> Shape {
        let c = &self.config;
        Shape::Tip {
            shank_start: c.tip_shank_start_x,
            apex: c.tip_apex_x,
            shank_radius: 0.5 * c.wire_diameter,
            apex_radius: c.tip_radius,
            taper_length: c.tip_taper_length,
        }
    }

    /// Field problem for the given voltages. The enclosure walls, including
    /// the downstream exit plane, are held at ground.
    pub fn problem(&self, v: &ElectrodeVoltages) -> FieldProblem {
        let c = &self.config;
        let mut p = FieldProblem::new(self.grid);
        let tip = p.add_electrode("tip", v.u_sat);
        let counter = p.add_electrode("counter", v.u_c);
        let ground = p.add_electrode("ground", v.u_ground);
        debug_assert_eq!((tip, counter, ground), (TIP, COUNTER, GROUND));
        let hole_r = 0.5 * c.aperture_hole_diameter;
        p.add_shape(tip, self.tip_shape());
        p.add_shape(
            counter,
            Shape::Annulus {
                x0: c.aperture1_x,
                x1: c.aperture1_x + c.aperture_thickness,
                r_in: hole_r,
                r_out: c.domain_radius - c.counter_wall_gap,
            },
        );
        p.add_shape(
            ground,
            Shape::Annulus {
                x0: c.aperture2_x,
                x1: c.aperture2_x + c.aperture_thickness,
                r_in: hole_r,
                r_out: c.domain_radius,
            },
        );
        p.x_min = Boundary::Dirichlet(ground);
        p.x_max = Boundary::Dirichlet(ground);
        p.r_max = Boundary::Dirichlet(ground);
        p
    }

    /// Centre of the hemispherical apex cap, on the axis.
    pub fn apex_center(&self) -> f64 {
        self.config.tip_apex_x - self.config.tip_radius
    }

    /// Downstream face of the grounded aperture.
    pub fn aperture2_exit(&self) -> f64 {
        self.config.aperture2_x + self.config.aperture_thickness
    }
}

/// Default solve tolerance: 1e-6 of the largest electrode voltage.
pub fn default_tolerance(v: &ElectrodeVoltages) -> f64 {
    (1e-6 * v.max_abs()).max(1e-9)
}

pub fn solve_laplace(
    geometry: &Geometry,
    voltages: &ElectrodeVoltages,
    tol: f64,
    max_iterations: usize,
) -> Result<PotentialGrid> {
    solve_laplace_with(geometry, voltages, tol, max_iterations, Exec::default())
}

pub fn solve_laplace_with(
    geometry: &Geometry,
    voltages: &ElectrodeVoltages,
    tol: f64,
    max_iterations: usize,
    exec: Exec,
) -> Result<PotentialGrid> {
    let v = voltages.violations();
    if !v.is_empty() {
        return Err(Error::Invalid(v));
    }
    let problem = geometry.problem(voltages);
    field::solve(&problem, &SolveOptions::new(tol, max_iterations).with_exec(exec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        let g = build_geometry(&GeometryConfig::default()).unwrap();
        assert_eq!(g.config.tip_radius, 2e-6);
        assert_eq!(g.mask.len(), g.grid.len());
        // apex node on the axis belongs to the tip
        let i = (g.config.tip_apex_x / g.grid.h).round() as usize;
        assert_eq!(g.mask[g.grid.idx(i, 0)], Some(TIP));
        assert_eq!(g.mask[g.grid.idx(i + 1, 0)], None);
    }

    #[test]
    fn unordered_apertures_rejected() {
        let cfg = GeometryConfig {
            aperture2_x: 2.5e-3,
            ..Default::default()
        };
        match build_geometry(&cfg) {
            Err(Error::Invalid(v)) => assert!(v.iter().any(|x| x.key == "geometry_aperture2_x")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        let cfg = GeometryConfig {
            h: 2.5e-3 / 5.0,
            ..Default::default()
        };
        let v = cfg.violations();
        assert!(v.iter().any(|x| x.key == "geometry_h"), "{v:?}");
    }

    #[test]
    fn negative_length_names_key() {
        let cfg = GeometryConfig {
            tip_radius: -1e-6,
            ..Default::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "geometry_tip_radius");
    }

    #[test]
    fn nonzero_ground_rejected() {
        let v = ElectrodeVoltages {
            u_ground: 1.0,
            ..Default::default()
        };
        assert_eq!(v.violations()[0].key, "voltages_u_ground");
    }
}
