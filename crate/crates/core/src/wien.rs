//! Wien filter in matched mode and longitudinal coherence.
//!
//! A condensator voltage `U_WF` shifts the two partial wave packets
//! longitudinally by `dy = (L / 2D) * (theta * d / |U_SAT|) * U_WF`. The
//! fringe contrast falls off as a Gaussian in `U_WF`; the coherence length
//! is the shift between the two points where it drops to 10% of its peak.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::lm::{self, LeastSquares, LmOptions};
use crate::optics::{calibrate_gamma, BeamParams, REFERENCE_BIPRISM_VOLTAGE, REFERENCE_S0, REFERENCE_S0_TIP_VOLTAGE};

/// `U_cl / sigma`: the 10% point of a Gaussian.
pub fn ten_percent_factor() -> f64 {
    (2.0 * std::f64::consts::LN_10).sqrt()
}

/// Coherence length the default distance `d_wf_qp` is calibrated to (m).
pub const REFERENCE_COHERENCE_LENGTH: f64 = 82e-9;
/// Gaussian width in `U_WF` assumed for that calibration (V).
pub const REFERENCE_SIGMA: f64 = 40.0;
pub const REFERENCE_TIP_VOLTAGE: f64 = -1600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienConfig {
    /// Condensator plate length L (m).
    pub plate_length: f64,
    /// Plate separation D (m).
    pub plate_distance: f64,
    /// Distance from the filter to the quadrupole (m).
    pub d_wf_qp: f64,
    /// Sweep range and number of steps of the condensator voltage (V).
    pub u_wf_min: f64,
    pub u_wf_max: f64,
    pub u_wf_steps: usize,
}

impl Default for WienConfig {
    /// Plate dimensions are estimates; `d_wf_qp` is then chosen so that a
    /// sweep of width [`REFERENCE_SIGMA`] at -1600 V yields
    /// [`REFERENCE_COHERENCE_LENGTH`].
    fn default() -> Self {
        let plate_length = 20e-3;
        let plate_distance = 4e-3;
        let gamma = calibrate_gamma(REFERENCE_S0, REFERENCE_S0_TIP_VOLTAGE, REFERENCE_BIPRISM_VOLTAGE)
            .expect("valid reference");
        let u = REFERENCE_TIP_VOLTAGE.abs();
        let theta = gamma * REFERENCE_BIPRISM_VOLTAGE / u;
        let u_cl = ten_percent_factor() * REFERENCE_SIGMA;
        // l_c = 2 * (L / 2D) * (theta * d / U) * U_cl
        let d_wf_qp = REFERENCE_COHERENCE_LENGTH * plate_distance * u / (plate_length * theta * u_cl);
        Self {
            plate_length,
            plate_distance,
            d_wf_qp,
            u_wf_min: -99.0,
            u_wf_max: 72.0,
            u_wf_steps: 19,
        }
    }
}

impl WienConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (key, val) in [
            ("wien_plate_length", self.plate_length),
            ("wien_plate_distance", self.plate_distance),
            ("wien_d_wf_qp", self.d_wf_qp),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(Violation::new(key, "must be positive"));
            }
        }
        if !(self.u_wf_max > self.u_wf_min) {
            v.push(Violation::new("wien_u_wf_max", "must exceed wien_u_wf_min"));
        }
        if self.u_wf_steps < 5 {
            v.push(Violation::new("wien_u_wf_steps", "need at least 5 sweep points"));
        }
        v
    }

    pub fn sweep_voltages(&self) -> Vec<f64> {
        let n = self.u_wf_steps.max(2);
        (0..n)
            .map(|k| self.u_wf_max + (self.u_wf_min - self.u_wf_max) * k as f64 / (n - 1) as f64)
            .collect()
    }

    /// `dy / U_WF` (m/V).
    pub fn shift_per_volt(&self, u_sat: f64, theta: f64) -> f64 {
        let dx = theta * self.d_wf_qp;
        self.plate_length / (2.0 * self.plate_distance) * dx / u_sat.abs()
    }
}

/// Magnetic field that cancels the electric force on a particle of speed `v`.
pub fn matched_field(v: f64, e: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::domain("particle speed must be positive"));
    }
    Ok(e / v)
}

/// Longitudinal shift of the partial wave packets (m).
pub fn packet_shift(cfg: &WienConfig, u_sat: f64, theta: f64, u_wf: f64) -> f64 {
    cfg.shift_per_volt(u_sat, theta) * u_wf
}

/// Gaussian contrast envelope with width `sigma_y` in shift units.
pub fn contrast_envelope(delta_y: f64, sigma_y: f64, c0: f64) -> Result<f64> {
    if !(sigma_y > 0.0) {
        return Err(Error::domain("envelope width must be positive"));
    }
    Ok(c0 * (-delta_y * delta_y / (2.0 * sigma_y * sigma_y)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u_wf: f64,
    pub contrast: f64,
    /// Non-positive or NaN when unknown.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussFit {
    pub c0: f64,
    pub center: f64,
    pub sigma: f64,
    /// One-sigma uncertainties of `(c0, center, sigma)`.
    pub errors: [f64; 3],
    pub reduced_chi2: f64,
}

struct Gauss<'a> {
    pts: &'a [SweepPoint],
    weighted: bool,
}

impl Gauss<'_> {
    fn w(&self, i: usize) -> f64 {
        if self.weighted {
            1.0 / self.pts[i].sigma
        } else {
            1.0
        }
    }
}

impl LeastSquares for Gauss<'_> {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.pts.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, q) in self.pts.iter().enumerate() {
            let z = (q.u_wf - p[1]) / p[2];
            out[i] = (q.contrast - p[0] * (-0.5 * z * z).exp()) * self.w(i);
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        for (i, q) in self.pts.iter().enumerate() {
            let z = (q.u_wf - p[1]) / p[2];
            let g = (-0.5 * z * z).exp();
            let w = -self.w(i);
            out[3 * i] = w * g;
            out[3 * i + 1] = w * p[0] * g * z / p[2];
            out[3 * i + 2] = w * p[0] * g * z * z / p[2];
        }
    }
    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
        p[2] = p[2].abs().max(1e-12);
    }
}

/// Gaussian fit of contrast against `U_WF`, inverse-variance weighted when
/// every point carries an uncertainty.
pub fn fit_gaussian(pts: &[SweepPoint]) -> Result<GaussFit> {
    if pts.len() < 5 {
        return Err(Error::Fit {
            message: format!("need at least 5 sweep points, got {}", pts.len()),
            cost: f64::NAN,
        });
    }
    let weighted = pts.iter().all(|p| p.sigma > 0.0 && p.sigma.is_finite());
    let mass: f64 = pts.iter().map(|p| p.contrast.max(0.0)).sum();
    if !(mass > 0.0) {
        return Err(Error::Fit {
            message: "no positive contrast in sweep".into(),
            cost: f64::NAN,
        });
    }
    let c0 = pts.iter().map(|p| p.contrast).fold(f64::NEG_INFINITY, f64::max);
    let mean = pts.iter().map(|p| p.contrast.max(0.0) * p.u_wf).sum::<f64>() / mass;
    let var = pts
        .iter()
        .map(|p| p.contrast.max(0.0) * (p.u_wf - mean).powi(2))
        .sum::<f64>()
        / mass;
    let problem = Gauss { pts, weighted };
    let rep = lm::minimize(&problem, &[c0, mean, var.sqrt().max(1e-6)], LmOptions::default());
    if !rep.converged {
        return Err(Error::Fit {
            message: "Gaussian fit did not converge".into(),
            cost: rep.cost,
        });
    }
    let e = rep.std_errors();
    Ok(GaussFit {
        c0: rep.params[0],
        center: rep.params[1],
        sigma: rep.params[2],
        errors: [e[0], e[1], e[2]],
        reduced_chi2: rep.reduced_chi2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub schema_version: u32,
    pub c0: f64,
    /// Fitted centre of the envelope (V).
    pub center: f64,
    /// Gaussian width in `U_WF` (V).
    pub sigma: f64,
    pub sigma_error: f64,
    /// V
    pub u_cl: f64,
    /// m
    pub l_c: f64,
    pub l_c_error: f64,
    /// eV
    pub delta_e: f64,
    pub delta_e_error: f64,
    /// The fitted centre lies outside the sampled voltages.
    pub extrapolated: bool,
    pub reduced_chi2: f64,
}

/// `2 U_SAT lambda / pi` (eV m): the product `delta_e * l_c`.
pub fn energy_length_product(beam: &BeamParams) -> f64 {
    2.0 * beam.ke_ev * beam.wavelength / std::f64::consts::PI
}

pub fn energy_width(beam: &BeamParams, l_c: f64) -> Result<f64> {
    if !(l_c > 0.0) {
        return Err(Error::domain("coherence length must be positive"));
    }
    Ok(energy_length_product(beam) / l_c)
}

pub fn analyze_wien_sweep(pts: &[SweepPoint], beam: &BeamParams, cfg: &WienConfig) -> Result<CoherenceResult> {
    let fit = fit_gaussian(pts)?;
    let u_cl = ten_percent_factor() * fit.sigma;
    // two-sided: the shift between the 10% points on either side of the centre
    let l_c = 2.0 * packet_shift(cfg, beam.ke_ev, beam.theta, u_cl).abs();
    let delta_e = energy_width(beam, l_c)?;
    let rel = fit.errors[2] / fit.sigma;
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.u_wf), b.max(p.u_wf))
    });
    Ok(CoherenceResult {
        schema_version: crate::SCHEMA_VERSION,
        c0: fit.c0,
        center: fit.center,
        sigma: fit.sigma,
        sigma_error: fit.errors[2],
        u_cl,
        l_c,
        l_c_error: l_c * rel,
        delta_e,
        delta_e_error: delta_e * rel,
        extrapolated: fit.center < lo || fit.center > hi,
        reduced_chi2: fit.reduced_chi2,
    })
}

/// Envelope width in `U_WF` that corresponds to a coherence length `l_c`.
pub fn sigma_for_coherence_length(beam: &BeamParams, cfg: &WienConfig, l_c: f64) -> f64 {
    let u_cl = l_c / (2.0 * cfg.shift_per_volt(beam.ke_ev, beam.theta));
    u_cl / ten_percent_factor()
}

/// Contrast sweep for a planted coherence length, with Gaussian noise of
/// standard deviation `noise` on every point (none when zero).
pub fn synthetic_sweep<R: Rng>(
    beam: &BeamParams,
    cfg: &WienConfig,
    l_c: f64,
    c0: f64,
    center: f64,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<SweepPoint>> {
    let sigma = sigma_for_coherence_length(beam, cfg, l_c);
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::domain(e.to_string()))?;
    cfg.sweep_voltages()
        .into_iter()
        .map(|u| {
            let clean = contrast_envelope(u - center, sigma, c0)?;
            let c = if noise > 0.0 { clean + normal.sample(rng) } else { clean };
            Ok(SweepPoint {
                u_wf: u,
                contrast: c,
                sigma: if noise > 0.0 { noise } else { f64::NAN },
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(w: W, pts: &[SweepPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["u_wf_V", "contrast", "sigma_contrast"])?;
    for p in pts {
        out.serialize((p.u_wf, p.contrast, p.sigma))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepPoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if headers != ["u_wf_V", "contrast", "sigma_contrast"] {
        return Err(Error::Parse(format!(
            "expected header u_wf_V,contrast,sigma_contrast, got {}",
            headers.join(",")
        )));
    }
    rd.deserialize()
        .map(|row| {
            let (u_wf, contrast, sigma): (f64, f64, f64) = row?;
            Ok(SweepPoint { u_wf, contrast, sigma })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::electron_speed;

    #[test]
    fn matched_field_examples() {
        assert_eq!(matched_field(1e7, 0.0).unwrap(), 0.0);
        let v = electron_speed(1600.0);
        assert!((v - 2.372e7).abs() < 0.001e7);
        assert!((matched_field(v, 1e4).unwrap() - 4.22e-4).abs() < 0.01e-4);
        assert!(matched_field(0.0, 1.0).is_err());
        assert!((matched_field(2.0 * v, 1e4).unwrap() * 2.0 - matched_field(v, 1e4).unwrap()).abs() < 1e-18);
    }

    #[test]
    fn printed_shift_example() {
        // L/D = 10, theta * d = 40 um
        let cfg = WienConfig {
            plate_length: 10e-3,
            plate_distance: 1e-3,
            d_wf_qp: 1.0,
            ..Default::default()
        };
        let dy = packet_shift(&cfg, -1600.0, 4e-5, 72.0);
        assert!((dy - 9.0e-6).abs() < 1e-18);
        assert_eq!(packet_shift(&cfg, -1600.0, 4e-5, 0.0), 0.0);
    }

    #[test]
    fn ten_percent_point() {
        let s = 3.0e-8;
        let c = contrast_envelope(ten_percent_factor() * s, s, 0.7).unwrap();
        assert!((c - 0.07).abs() < 1e-15);
        assert_eq!(contrast_envelope(0.0, s, 0.7).unwrap(), 0.7);
        assert!(contrast_envelope(0.0, 0.0, 0.7).is_err());
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<_> = (0..4)
            .map(|k| SweepPoint {
                u_wf: k as f64,
                contrast: 0.5,
                sigma: 0.01,
            })
            .collect();
        assert!(matches!(fit_gaussian(&pts), Err(Error::Fit { .. })));
    }

    #[test]
    fn sweep_csv_round_trip() {
        let pts = vec![SweepPoint {
            u_wf: 72.0,
            contrast: 0.3,
            sigma: 0.02,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &pts).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("u_wf_V,contrast,sigma_contrast\n"));
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), pts);
    }
}
