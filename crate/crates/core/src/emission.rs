//! Fowler-Nordheim emission model.
//!
//! The count rate is `T * a * phi^2 * exp(-b / phi)` where `phi` is the
//! drive voltage and `T` a constant aperture transmission. In
//! Fowler-Nordheim coordinates `(1/phi, ln(rate/phi^2))` the law is a
//! straight line with slope `-b` and intercept `ln(T a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::geometry::ElectrodeVoltages;

/// Which voltage drives emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// `|U_SAT|`
    TipVoltage,
    /// `U_c - U_SAT`
    PotentialDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FNParams {
    /// Hz / V^2
    pub a: f64,
    /// V
    pub b: f64,
    pub drive: Drive,
    /// Fraction of the emitted beam passing the apertures, in (0, 1].
    pub transmission: f64,
}

/// Drive voltages of the reference sweep: `U_SAT = -1600 V` with the
/// counter electrode at -119.7 V and +199.7 V.
pub const ANCHOR_LOW: f64 = 1480.3;
pub const ANCHOR_HIGH: f64 = 1799.7;
/// Rate ratio between the two anchors.
pub const ANCHOR_RATIO: f64 = 33.0;
/// Rate assigned to the low anchor by the default parameters. Arbitrary:
/// only ratios are meaningful without a user calibration.
pub const ANCHOR_LOW_RATE: f64 = 1000.0;

impl Default for FNParams {
    /// Parameters whose rate ratio between the two anchor drives is
    /// exactly [`ANCHOR_RATIO`].
    fn default() -> Self {
        let b = (ANCHOR_RATIO.ln() - 2.0 * (ANCHOR_HIGH / ANCHOR_LOW).ln()) / (1.0 / ANCHOR_LOW - 1.0 / ANCHOR_HIGH);
        let a = ANCHOR_LOW_RATE / (ANCHOR_LOW * ANCHOR_LOW * (-b / ANCHOR_LOW).exp());
        Self {
            a,
            b,
            drive: Drive::PotentialDifference,
            transmission: 1.0,
        }
    }
}

impl FNParams {
    pub fn new(a: f64, b: f64, drive: Drive) -> Result<Self> {
        let p = Self {
            a,
            b,
            drive,
            transmission: 1.0,
        };
        p.check()?;
        Ok(p)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.a > 0.0 && self.a.is_finite()) {
            v.push(Violation::new("emission_a", "prefactor must be positive and finite"));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            v.push(Violation::new("emission_b", "exponent must be positive and finite"));
        }
        if !(self.transmission > 0.0 && self.transmission <= 1.0) {
            v.push(Violation::new("emission_transmission", "must lie in (0, 1]"));
        }
        v
    }

    fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    /// Drive voltage for an electrode configuration.
    pub fn drive_voltage(&self, v: &ElectrodeVoltages) -> f64 {
        match self.drive {
            Drive::TipVoltage => v.u_sat.abs(),
            Drive::PotentialDifference => v.u_c - v.u_sat,
        }
    }

    pub fn rate_for(&self, v: &ElectrodeVoltages) -> Result<f64> {
        fn_rate(self, self.drive_voltage(v))
    }
}

pub fn fn_rate(params: &FNParams, phi: f64) -> Result<f64> {
    params.check()?;
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::domain(format!("drive voltage must be positive, got {phi} V")));
    }
    Ok(params.transmission * params.a * phi * phi * (-params.b / phi).exp())
}

/// Fowler-Nordheim coordinates of one point.
pub fn fn_coordinates(phi: f64, rate: f64) -> (f64, f64) {
    (1.0 / phi, (rate / (phi * phi)).ln())
}

/// `n` evenly spaced drives over `range`, in Fowler-Nordheim coordinates.
pub fn fn_plot(params: &FNParams, range: (f64, f64), n: usize) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = range;
    if n < 2 || !(lo > 0.0) || !(hi > lo) {
        return Err(Error::domain("need 0 < lo < hi and n >= 2"));
    }
    (0..n)
        .map(|k| {
            let phi = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            Ok(fn_coordinates(phi, fn_rate(params, phi)?))
        })
        .collect()
}

/// Least-squares line `y = intercept + slope * x`, computed on centred data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a point from the line.
    pub max_residual: f64,
    pub rms_residual: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::Fit {
            message: "need at least two points".into(),
            cost: f64::NAN,
        });
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let spread = points.iter().map(|p| (p.0 - mx).abs()).fold(0.0, f64::max);
    if !(spread > 1e-12 * mx.abs()) || sxx == 0.0 {
        return Err(Error::Fit {
            message: "all points share the same abscissa".into(),
            cost: f64::NAN,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = points.iter().map(|p| p.1 - my - slope * (p.0 - mx)).collect();
    Ok(LineFit {
        slope,
        intercept,
        max_residual: res.iter().fold(0.0, |m, r| m.max(r.abs())),
        rms_residual: (res.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Fitted parameters; `a` absorbs any aperture transmission.
    pub params: FNParams,
    pub line: LineFit,
    pub points: usize,
}

/// Fit `(a, b)` to measured `(phi, rate)` pairs.
pub fn calibrate_fn(points: &[(f64, f64)], drive: Drive) -> Result<Calibration> {
    let mut bad = Vec::new();
    for (k, &(phi, rate)) in points.iter().enumerate() {
        if !(phi > 0.0 && rate > 0.0 && phi.is_finite() && rate.is_finite()) {
            bad.push(Violation::new(
                format!("points[{k}]"),
                format!("phi = {phi} V and rate = {rate} Hz must be positive"),
            ));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Invalid(bad));
    }
    let fn_points: Vec<_> = points.iter().map(|&(p, r)| fn_coordinates(p, r)).collect();
    let line = fit_line(&fn_points)?;
    let params = FNParams::new(line.intercept.exp(), -line.slope, drive).map_err(|_| Error::Fit {
        message: format!("fitted slope {} implies a non-positive exponent", line.slope),
        cost: line.rms_residual,
    })?;
    Ok(Calibration {
        params,
        line,
        points: points.len(),
    })
}

/// Read `phi_V,rate_Hz` rows.
pub fn read_calibration_csv<R: std::io::Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["phi_V", "rate_Hz"] {
        return Err(Error::Parse(format!(
            "expected header phi_V,rate_Hz, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_calibration_csv<W: std::io::Write>(w: W, points: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["phi_V", "rate_Hz"])?;
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_fn_plot_csv<W: std::io::Write>(w: W, points: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["inv_phi_per_V", "ln_rate_over_phi2"])?;
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_rejects_non_positive_drive() {
        let p = FNParams::default();
        assert!(fn_rate(&p, 0.0).is_err());
        assert!(fn_rate(&p, -10.0).is_err());
        assert!(FNParams::new(-1.0, 1.0, Drive::TipVoltage).is_err());
    }

    #[test]
    fn default_hits_anchor_rate() {
        let p = FNParams::default();
        assert!((fn_rate(&p, ANCHOR_LOW).unwrap() - ANCHOR_LOW_RATE).abs() < 1e-9);
    }

    #[test]
    fn doubling_prefactor_doubles_rate() {
        let p = FNParams::default();
        let q = FNParams { a: 2.0 * p.a, ..p };
        for phi in [100.0, 1500.0, 4000.0] {
            let (r, s) = (fn_rate(&p, phi).unwrap(), fn_rate(&q, phi).unwrap());
            assert!((s / r - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_points_invert_exactly() {
        let p = FNParams::new(3.5e-2, 21_000.0, Drive::TipVoltage).unwrap();
        let pts: Vec<_> = [1200.0, 1900.0].iter().map(|&x| (x, fn_rate(&p, x).unwrap())).collect();
        let c = calibrate_fn(&pts, Drive::TipVoltage).unwrap();
        assert!((c.params.b / p.b - 1.0).abs() < 1e-12);
        assert!((c.params.a / p.a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_points_fail() {
        let pts = [(1500.0, 10.0), (1500.0, 12.0), (1500.0, 11.0)];
        assert!(matches!(calibrate_fn(&pts, Drive::TipVoltage), Err(Error::Fit { .. })));
        assert!(calibrate_fn(&[(1500.0, 10.0)], Drive::TipVoltage).is_err());
        assert!(matches!(
            calibrate_fn(&[(1500.0, -1.0), (1600.0, 1.0)], Drive::TipVoltage),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn plot_endpoints() {
        let p = FNParams::default();
        let pts = fn_plot(&p, (1480.0, 1800.0), 2).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].0, 1.0 / 1480.0);
        assert_eq!(pts[1].0, 1.0 / 1800.0);
        assert!(fn_plot(&p, (1800.0, 1480.0), 5).is_err());
    }

    #[test]
    fn drive_definitions() {
        let p = FNParams::default();
        let v = ElectrodeVoltages::new(-1600.0, 199.7);
        assert!((p.drive_voltage(&v) - 1799.7).abs() < 1e-9);
        let q = FNParams {
            drive: Drive::TipVoltage,
            ..p
        };
        assert_eq!(q.drive_voltage(&v), 1600.0);
    }

    #[test]
    fn calibration_csv_round_trip() {
        let pts = vec![(1480.3, 1000.0), (1799.7, 33000.0)];
        let mut buf = Vec::new();
        write_calibration_csv(&mut buf, &pts).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("phi_V,rate_Hz\n"));
        assert_eq!(read_calibration_csv(buf.as_slice()).unwrap(), pts);
        assert!(read_calibration_csv("V,Hz\n1,2\n".as_bytes()).is_err());
    }
}
