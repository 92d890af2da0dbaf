//! Biprism interferometer forward model and fringe fitting.
//!
//! The detector pattern is
//! `I(x) = I0 * (1 + C cos(2 pi x / s + phi0)) * sinc^2(2 pi x / s1 + phi1)`
//! with `sinc(u) = sin(u) / u`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{ELECTRON_MASS, ELEMENTARY_CHARGE, PLANCK};
use crate::error::{Error, Result, Violation};
use crate::geometry::ElectrodeVoltages;
use crate::lm::{self, LeastSquares, LmOptions};
use crate::special::{sinc, sinc2_inverse, sinc_deriv};

/// Non-relativistic de Broglie wavelength (m) after acceleration through `u` volts.
pub fn de_broglie(u: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::domain(format!(
            "acceleration potential must be positive, got {u} V"
        )));
    }
    Ok(PLANCK / (2.0 * ELECTRON_MASS * ELEMENTARY_CHARGE * u).sqrt())
}

/// Inverse of [`de_broglie`].
pub fn potential_for_wavelength(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain("wavelength must be positive"));
    }
    Ok(PLANCK * PLANCK / (2.0 * ELECTRON_MASS * ELEMENTARY_CHARGE * lambda * lambda))
}

/// Biprism voltage of the reference runs (V).
pub const REFERENCE_BIPRISM_VOLTAGE: f64 = 0.331;
/// Fringe spacing before magnification at `U_SAT = -600 V` (m).
pub const REFERENCE_S0: f64 = 928e-9;
pub const REFERENCE_S0_TIP_VOLTAGE: f64 = -600.0;
/// Detector fringe spacing of the 600 V run (m).
pub const REFERENCE_S_DETECTOR: f64 = 9.0e-3;

/// Biprism constant `gamma` such that `lambda / (2 Theta) = s0` with
/// `Theta = gamma * u_bp / |u_sat|`.
pub fn calibrate_gamma(s0: f64, u_sat: f64, u_bp: f64) -> Result<f64> {
    if !(s0 > 0.0) || u_bp == 0.0 {
        return Err(Error::domain("need s0 > 0 and a non-zero biprism voltage"));
    }
    let lambda = de_broglie(u_sat.abs())?;
    Ok(lambda * u_sat.abs() / (2.0 * s0 * u_bp.abs()))
}

pub fn magnification_from_measurement(s_detector: f64, s0_theory: f64) -> Result<f64> {
    if !(s_detector > 0.0) || !(s0_theory > 0.0) {
        return Err(Error::domain("fringe spacings must be positive"));
    }
    Ok(s_detector / s0_theory)
}

/// Quadrupole magnification as a function of the tip voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnificationModel {
    Constant(f64),
    /// `(|U_SAT| in V, M)` pairs, interpolated linearly in log-log space and
    /// extrapolated along the end segments.
    Table(Vec<(f64, f64)>),
}

impl MagnificationModel {
    /// Table from detector fringe spacings measured at given tip voltages.
    pub fn from_measurements(gamma: f64, u_bp: f64, measured: &[(f64, f64)]) -> Result<Self> {
        let mut pts = Vec::with_capacity(measured.len());
        for &(u_sat, s) in measured {
            let s0 = spacing_before_magnification(gamma, u_bp, u_sat)?;
            pts.push((u_sat.abs(), magnification_from_measurement(s, s0)?));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::Table(pts))
    }

    pub fn violations(&self) -> Vec<Violation> {
        let bad = |m: f64| !(m > 0.0 && m.is_finite());
        match self {
            Self::Constant(m) if bad(*m) => vec![Violation::new("beam_magnification", "must be positive")],
            Self::Constant(_) => vec![],
            Self::Table(t) => {
                let mut v = Vec::new();
                if t.is_empty() {
                    v.push(Violation::new("beam_magnification_table", "empty table"));
                }
                if t.iter().any(|&(u, m)| !(u > 0.0) || bad(m)) {
                    v.push(Violation::new(
                        "beam_magnification_table",
                        "voltages and magnifications must be positive",
                    ));
                }
                if t.windows(2).any(|w| w[1].0 <= w[0].0) {
                    v.push(Violation::new(
                        "beam_magnification_table",
                        "voltages must be strictly increasing",
                    ));
                }
                v
            }
        }
    }

    pub fn at(&self, u_sat: f64) -> f64 {
        match self {
            Self::Constant(m) => *m,
            Self::Table(t) => {
                if t.len() == 1 {
                    return t[0].1;
                }
                let u = u_sat.abs();
                let k = t.partition_point(|p| p.0 < u).clamp(1, t.len() - 1);
                let (a, b) = (t[k - 1], t[k]);
                let slope = (b.1 / a.1).ln() / (b.0 / a.0).ln();
                a.1 * (u / a.0).powf(slope)
            }
        }
    }
}

fn spacing_before_magnification(gamma: f64, u_bp: f64, u_sat: f64) -> Result<f64> {
    let lambda = de_broglie(u_sat.abs())?;
    let theta = gamma * u_bp / u_sat.abs();
    if !(theta > 0.0) {
        return Err(Error::domain(
            "superposition angle is zero: the partial beams do not overlap",
        ));
    }
    Ok(lambda / (2.0 * theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Biprism constant (rad).
    pub gamma: f64,
    /// Biprism fiber voltage (V).
    pub u_bp: f64,
    pub magnification: MagnificationModel,
}

impl Default for BeamConfig {
    /// `gamma` from the 928 nm reference spacing and a magnification table
    /// built from the three measured detector spacings.
    fn default() -> Self {
        let u_bp = REFERENCE_BIPRISM_VOLTAGE;
        let gamma = calibrate_gamma(REFERENCE_S0, REFERENCE_S0_TIP_VOLTAGE, u_bp).expect("reference values are valid");
        let measured = [
            (REFERENCE_S0_TIP_VOLTAGE, REFERENCE_S_DETECTOR),
            (-potential_for_wavelength(31.1e-12).unwrap(), 2.59e-3),
            (-potential_for_wavelength(28.9e-12).unwrap(), 1.89e-3),
        ];
        let magnification =
            MagnificationModel::from_measurements(gamma, u_bp, &measured).expect("reference values are valid");
        Self {
            gamma,
            u_bp,
            magnification,
        }
    }
}

impl BeamConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.magnification.violations();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            v.push(Violation::new("beam_gamma", "must be positive"));
        }
        if !self.u_bp.is_finite() {
            v.push(Violation::new("beam_u_bp", "must be finite"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub ke_ev: f64,
    /// m
    pub wavelength: f64,
    pub u_bp: f64,
    /// rad
    pub theta: f64,
    pub gamma: f64,
    /// m
    pub s0: f64,
    pub magnification: f64,
    /// m
    pub s: f64,
}

impl BeamParams {
    /// Beam after full deceleration to ground: its energy is set by the tip
    /// voltage alone.
    pub fn for_voltages(cfg: &BeamConfig, v: &ElectrodeVoltages) -> Result<Self> {
        let u = v.u_sat.abs();
        let wavelength = de_broglie(u)?;
        let theta = cfg.gamma * cfg.u_bp.abs() / u;
        let magnification = cfg.magnification.at(u);
        let mut p = Self {
            ke_ev: u,
            wavelength,
            u_bp: cfg.u_bp,
            theta,
            gamma: cfg.gamma,
            s0: f64::NAN,
            magnification,
            s: f64::NAN,
        };
        let (s0, s) = fringe_spacing(&p)?;
        p.s0 = s0;
        p.s = s;
        Ok(p)
    }
}

/// `(s0, s)`: spacing before and after magnification.
pub fn fringe_spacing(beam: &BeamParams) -> Result<(f64, f64)> {
    if !(beam.theta > 0.0) {
        return Err(Error::domain(
            "superposition angle is zero: the partial beams do not overlap",
        ));
    }
    if !(beam.magnification > 0.0) {
        return Err(Error::domain("magnification must be positive"));
    }
    let s0 = beam.wavelength / (2.0 * beam.theta);
    Ok((s0, beam.magnification * s0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeModel {
    pub i0: f64,
    pub contrast: f64,
    pub s: f64,
    pub phi0: f64,
    pub s1: f64,
    pub phi1: f64,
}

impl FringeModel {
    pub fn as_array(&self) -> [f64; 6] {
        [self.i0, self.contrast, self.s, self.phi0, self.s1, self.phi1]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            i0: p[0],
            contrast: p[1],
            s: p[2],
            phi0: p[3],
            s1: p[4],
            phi1: p[5],
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.contrast) {
            v.push(Violation::new("contrast", "must lie in [0, 1]"));
        }
        if !(self.s > 0.0) {
            v.push(Violation::new("s", "fringe distance must be positive"));
        }
        if !(self.s1 > 0.0) {
            v.push(Violation::new("s1", "envelope width must be positive"));
        }
        v
    }

    /// Centre of the envelope.
    pub fn center(&self) -> f64 {
        -self.phi1 * self.s1 / (2.0 * PI)
    }
}

pub fn intensity_pattern(m: &FringeModel, x: f64) -> f64 {
    let env = sinc(2.0 * PI * x / m.s1 + m.phi1);
    m.i0 * (1.0 + m.contrast * (2.0 * PI * x / m.s + m.phi0).cos()) * env * env
}

/// Fringe periods inside the region where the envelope exceeds
/// `threshold` times its peak.
pub fn count_fringes(m: &FringeModel, threshold: f64) -> Result<u32> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain("threshold must lie in (0, 1)"));
    }
    let u = sinc2_inverse(threshold);
    let width = 2.0 * u * m.s1 / (2.0 * PI);
    Ok((width / m.s).round() as u32)
}

/// Uniformly binned counts or intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::domain("need hi > lo and at least one bin"));
        }
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0.0; bins];
        for x in samples {
            if x >= lo && x < hi {
                counts[(((x - lo) / w) as usize).min(bins - 1)] += 1.0;
            }
        }
        Ok(Self {
            centers: (0..bins).map(|k| lo + (k as f64 + 0.5) * w).collect(),
            counts,
        })
    }

    pub fn bin_width(&self) -> f64 {
        if self.centers.len() < 2 {
            return f64::NAN;
        }
        (self.centers[self.centers.len() - 1] - self.centers[0]) / (self.centers.len() - 1) as f64
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_center_m", "counts"])?;
        for (c, n) in self.centers.iter().zip(&self.counts) {
            out.serialize((c, n))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if headers != ["bin_center_m", "counts"] {
            return Err(Error::Parse(format!(
                "expected header bin_center_m,counts, got {}",
                headers.join(",")
            )));
        }
        let (mut centers, mut counts) = (Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let (c, n): (f64, f64) = row?;
            centers.push(c);
            counts.push(n);
        }
        Ok(Self { centers, counts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub model: FringeModel,
    /// One-sigma uncertainties in the order `i0, contrast, s, phi0, s1, phi1`.
    pub errors: [f64; 6],
    pub cost: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

impl FringeFit {
    pub fn contrast_error(&self) -> f64 {
        self.errors[1]
    }
}

struct FringeProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    inv_sigma: Vec<f64>,
    /// Upper bound on the envelope width; keeps featureless data from
    /// pushing `s1` to infinity.
    s1_max: f64,
}

impl LeastSquares for FringeProblem<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let m = FringeModel::from_slice(p);
        for (k, o) in out.iter_mut().enumerate() {
            *o = (self.y[k] - intensity_pattern(&m, self.x[k])) * self.inv_sigma[k];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        let [i0, c, s, phi0, s1, phi1] = [p[0], p[1], p[2], p[3], p[4], p[5]];
        for (i, &x) in self.x.iter().enumerate() {
            let th = 2.0 * PI * x / s + phi0;
            let u = 2.0 * PI * x / s1 + phi1;
            let (sn, cs) = th.sin_cos();
            let f = 1.0 + c * cs;
            let sc = sinc(u);
            let g = sc * sc;
            let dg = 2.0 * sc * sinc_deriv(u);
            let w = -self.inv_sigma[i];
            let row = &mut out[i * 6..i * 6 + 6];
            row[0] = w * f * g;
            row[1] = w * i0 * cs * g;
            row[2] = w * i0 * g * c * sn * 2.0 * PI * x / (s * s);
            row[3] = w * (-i0 * g * c * sn);
            row[4] = w * i0 * f * dg * (-2.0 * PI * x / (s1 * s1));
            row[5] = w * i0 * f * dg;
        }
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
        p[1] = p[1].clamp(0.0, 1.0);
        p[2] = p[2].max(1e-12 * p[2].abs().max(1e-300));
        p[4] = p[4].clamp(1e-12 * p[4].abs().max(1e-300), self.s1_max);
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Magnitude of the discrete-time Fourier transform of `y` at frequency `f`.
fn spectrum(x: &[f64], y: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (2.0 * PI * f * xi).sin_cos();
        re += yi * c;
        im += yi * s;
    }
    re.hypot(im)
}

fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    let n = y.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Deterministic starting point for the fringe fit.
pub fn initial_guess(h: &Histogram) -> Result<FringeModel> {
    let (x, y) = (&h.centers, &h.counts);
    let n = x.len();
    let fit_err = |message: &str| Error::Fit {
        message: message.into(),
        cost: f64::NAN,
    };
    if n < 8 {
        return Err(fit_err("need at least 8 bins"));
    }
    let w = h.bin_width();
    let span = w * n as f64;
    let f_nyq = 0.5 / w;
    let df = 0.125 / span;

    // envelope width from the first half-power point of the spectrum
    let s0 = spectrum(x, y, 0.0);
    if !(s0 > 0.0) {
        return Err(fit_err("histogram is empty"));
    }
    let mut f = df;
    while f < f_nyq && spectrum(x, y, f) > 0.5 * s0 {
        f += df;
    }
    let s1_spec = 1.0 / f;

    // fringe frequency from the dominant spectral peak above the envelope band
    let f_lo = 2.2 / s1_spec;
    if f_lo >= f_nyq {
        return Err(fit_err("no resolvable fringes"));
    }
    let (mut best_f, mut best) = (f64::NAN, -1.0);
    let mut f = f_lo;
    while f < f_nyq {
        let a = spectrum(x, y, f);
        if a > best {
            best = a;
            best_f = f;
        }
        f += df;
    }
    // parabolic refinement of the peak
    let (a, b, c) = (spectrum(x, y, best_f - df), best, spectrum(x, y, best_f + df));
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        best_f += 0.5 * df * (a - c) / denom;
    }
    let s = 1.0 / best_f;

    // envelope from data smoothed over one fringe period
    let half = ((0.5 * s / w).round() as usize).max(1);
    let env = moving_average(y, half);
    let peak = env.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k_max = env.iter().position(|&v| v == peak).unwrap_or(n / 2);
    let mut lo = k_max;
    while lo > 0 && env[lo] > 0.5 * peak {
        lo -= 1;
    }
    let mut hi = k_max;
    while hi + 1 < n && env[hi] > 0.5 * peak {
        hi += 1;
    }
    let (sum, wsum) = (lo..=hi).fold((0.0, 0.0), |(a, b), k| (a + env[k] * x[k], b + env[k]));
    let center = if wsum > 0.0 { sum / wsum } else { x[k_max] };
    let s1 = (((hi - lo) as f64 * w) / 0.4430).max(2.0 * w);
    let phi1 = -2.0 * PI * center / s1;

    // I0, C, phi0 from a linear fit with the envelope fixed
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for k in 0..n {
        let e = sinc(2.0 * PI * x[k] / s1 + phi1).powi(2);
        let (sn, cs) = (2.0 * PI * x[k] / s).sin_cos();
        let row = nalgebra::Vector3::new(e, e * cs, e * sn);
        ata += row * row.transpose();
        atb += row * y[k];
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| fit_err("singular initial projection"))?;
    let i0 = sol[0].max(1e-300);
    let contrast = (sol[1].hypot(sol[2]) / i0).clamp(0.0, 0.99);
    let phi0 = (-sol[2]).atan2(sol[1]);
    Ok(FringeModel {
        i0,
        contrast,
        s,
        phi0,
        s1,
        phi1,
    })
}

/// Weighted least-squares fit of the fringe model to a histogram.
///
/// Weights are Poisson-like, `sigma^2 = max(y, 1e-3 * max(y))`, so the
/// fitted parameters do not change when the histogram is rescaled. The
/// envelope width is bounded by 100 times the histogram span.
pub fn fit_fringes(h: &Histogram) -> Result<FringeFit> {
    if h.centers.len() != h.counts.len() {
        return Err(Error::domain("centers and counts differ in length"));
    }
    if h.counts.iter().any(|&c| !(c >= 0.0)) {
        return Err(Error::domain("counts must be non-negative"));
    }
    let start = initial_guess(h)?;
    let ymax = h.counts.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-3 * ymax;
    let problem = FringeProblem {
        x: &h.centers,
        y: &h.counts,
        inv_sigma: h.counts.iter().map(|&c| 1.0 / c.max(floor).sqrt()).collect(),
        s1_max: 100.0 * h.bin_width() * h.centers.len() as f64,
    };
    let opts = LmOptions {
        max_iterations: 1000,
        ftol: 1e-12,
        ..Default::default()
    };
    let rep = lm::minimize(&problem, &start.as_array(), opts);
    if !rep.converged {
        return Err(Error::Fit {
            message: format!("fringe fit did not converge in {} iterations", rep.iterations),
            cost: rep.cost,
        });
    }
    let errs = rep.std_errors();
    let mut model = FringeModel::from_slice(&rep.params);
    model.phi0 = wrap_phase(model.phi0);
    Ok(FringeFit {
        model,
        errors: [errs[0], errs[1], errs[2], errs[3], errs[4], errs[5]],
        cost: rep.cost,
        reduced_chi2: rep.reduced_chi2,
        iterations: rep.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted() -> FringeModel {
        FringeModel {
            i0: 1000.0,
            contrast: 0.535,
            s: 1.0e-3,
            phi0: 0.4,
            s1: 6.0e-3,
            phi1: -0.3,
        }
    }

    fn sample(m: &FringeModel, bins: usize, half_width: f64) -> Histogram {
        let centers: Vec<f64> = (0..bins)
            .map(|k| -half_width + 2.0 * half_width * (k as f64 + 0.5) / bins as f64)
            .collect();
        let counts = centers.iter().map(|&x| intensity_pattern(m, x)).collect();
        Histogram { centers, counts }
    }

    #[test]
    fn wavelength_values() {
        assert!((de_broglie(1600.0).unwrap() - 30.66e-12).abs() < 0.01e-12);
        assert!(de_broglie(0.0).is_err());
        let l = de_broglie(321.0).unwrap();
        assert!((potential_for_wavelength(l).unwrap() - 321.0).abs() < 1e-9);
    }

    #[test]
    fn pattern_limits() {
        let m = FringeModel {
            phi0: 0.0,
            phi1: 0.0,
            ..planted()
        };
        assert!((intensity_pattern(&m, 0.0) - m.i0 * (1.0 + m.contrast)).abs() < 1e-9);
        let flat = FringeModel { contrast: 0.0, ..m };
        for x in [-2e-3, 1e-4, 3e-3] {
            let e = sinc(2.0 * PI * x / m.s1).powi(2);
            assert!((intensity_pattern(&flat, x) - m.i0 * e).abs() < 1e-9);
        }
    }

    #[test]
    fn magnification_trivia() {
        assert_eq!(magnification_from_measurement(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(magnification_from_measurement(4.0, 2.0).unwrap(), 2.0);
        assert!(magnification_from_measurement(1.0, 0.0).is_err());
    }

    #[test]
    fn zero_angle_is_degenerate() {
        let cfg = BeamConfig {
            u_bp: 0.0,
            ..Default::default()
        };
        assert!(BeamParams::for_voltages(&cfg, &ElectrodeVoltages::new(-600.0, 0.0)).is_err());
    }

    #[test]
    fn table_interpolates_in_log_space() {
        let t = MagnificationModel::Table(vec![(100.0, 1000.0), (400.0, 250.0)]);
        assert!((t.at(200.0) - 500.0).abs() < 1e-9);
        assert!((t.at(-400.0) - 250.0).abs() < 1e-9);
        assert!((t.at(800.0) - 125.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_round_trip() {
        let m = planted();
        let fit = fit_fringes(&sample(&m, 400, 8e-3)).unwrap();
        for (a, b) in fit.model.as_array().iter().zip(m.as_array()) {
            assert!((a - b).abs() <= 1e-6 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn guess_is_close() {
        let m = planted();
        let g = initial_guess(&sample(&m, 400, 8e-3)).unwrap();
        assert!((g.s / m.s - 1.0).abs() < 0.05, "s {}", g.s);
        assert!((g.s1 / m.s1 - 1.0).abs() < 0.3, "s1 {}", g.s1);
    }

    #[test]
    fn fringe_count_scales_with_envelope() {
        let m = planted();
        let n = count_fringes(&m, 0.1).unwrap();
        let wide = FringeModel { s1: 2.0 * m.s1, ..m };
        let n2 = count_fringes(&wide, 0.1).unwrap();
        assert!((n2 as i64 - 2 * n as i64).abs() <= 1);
        let one = FringeModel { s1: m.s, ..m };
        assert_eq!(count_fringes(&one, 0.3).unwrap(), 1);
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = Histogram::from_samples([0.1, 0.2, 0.25, 0.9], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![2.0, 1.0, 0.0, 1.0]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(Histogram::read_csv(buf.as_slice()).unwrap(), h);
    }
}
