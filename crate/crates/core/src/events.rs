//! Time-tagged detector events under sinusoidal dephasing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::optics::{fit_fringes, intensity_pattern, FringeFit, FringeModel, Histogram};
use crate::special::sinc;

/// Fringe phase `phi0(t) = phi0 + amplitude * sin(2 pi frequency t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingModel {
    /// rad
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// rad
    pub phase: f64,
}

impl Default for DephasingModel {
    /// 50 Hz pickup with amplitude 0.4 pi.
    fn default() -> Self {
        Self {
            amplitude: 0.4 * PI,
            frequency: 50.0,
            phase: 0.0,
        }
    }
}

impl DephasingModel {
    pub fn none() -> Self {
        Self {
            amplitude: 0.0,
            ..Default::default()
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            v.push(Violation::new("dephasing_amplitude", "must be non-negative"));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            v.push(Violation::new("dephasing_frequency", "must be positive"));
        }
        if !self.phase.is_finite() {
            v.push(Violation::new("dephasing_phase", "must be finite"));
        }
        v
    }

    pub fn offset(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }
}

/// Rectangular detector area (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Detector {
    /// The central lobe of the envelope along x, `y_half` either side of 0 along y.
    pub fn main_lobe(m: &FringeModel, y_half: f64) -> Self {
        let c = m.center();
        Self {
            x_min: c - 0.5 * m.s1,
            x_max: c + 0.5 * m.s1,
            y_min: -y_half,
            y_max: y_half,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// s
    pub t: f64,
    /// m
    pub x: f64,
    /// m
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub events: Vec<Event>,
    /// s
    pub duration: f64,
    pub detector: Detector,
    pub seed: u64,
}

impl EventList {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn mean_rate(&self) -> f64 {
        self.events.len() as f64 / self.duration
    }

    /// CSV with columns `t_ns,x_mm,y_mm`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_ns", "x_mm", "y_mm"])?;
        for e in &self.events {
            out.serialize((e.t * 1e9, e.x * 1e3, e.y * 1e3))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Events from CSV. Duration and detector are taken from the data
    /// unless supplied.
    pub fn read_csv<R: std::io::Read>(r: R, duration: Option<f64>, detector: Option<Detector>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if headers != ["t_ns", "x_mm", "y_mm"] {
            return Err(Error::Parse(format!(
                "expected header t_ns,x_mm,y_mm, got {}",
                headers.join(",")
            )));
        }
        let mut events = Vec::new();
        for row in rd.deserialize() {
            let (t, x, y): (f64, f64, f64) = row?;
            events.push(Event {
                t: t * 1e-9,
                x: x * 1e-3,
                y: y * 1e-3,
            });
        }
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Parse("event times must be non-decreasing".into()));
        }
        let detector = detector.unwrap_or_else(|| {
            let f = |g: fn(&Event) -> f64, min: bool| {
                events
                    .iter()
                    .map(g)
                    .fold(if min { f64::INFINITY } else { f64::NEG_INFINITY }, |a, b| {
                        if min {
                            a.min(b)
                        } else {
                            a.max(b)
                        }
                    })
            };
            Detector {
                x_min: f(|e| e.x, true),
                x_max: f(|e| e.x, false),
                y_min: f(|e| e.y, true),
                y_max: f(|e| e.y, false),
            }
        });
        let duration = duration.unwrap_or_else(|| events.last().map_or(0.0, |e| e.t));
        Ok(Self {
            events,
            duration,
            detector,
            seed: 0,
        })
    }
}

/// Poisson arrivals at `rate` over `duration`; each position is drawn from
/// the fringe pattern with the phase it has at the arrival time.
pub fn generate_events(
    model: &FringeModel,
    dephasing: &DephasingModel,
    rate: f64,
    duration: f64,
    detector: &Detector,
    seed: u64,
) -> Result<EventList> {
    let mut bad = model.violations();
    bad.extend(dephasing.violations());
    if !(rate > 0.0 && rate.is_finite()) {
        bad.push(Violation::new("rate", "must be positive"));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        bad.push(Violation::new("duration", "must be positive"));
    }
    if !(detector.x_max > detector.x_min && detector.y_max >= detector.y_min) {
        bad.push(Violation::new("detector", "empty detector area"));
    }
    if !bad.is_empty() {
        return Err(Error::Invalid(bad));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).map_err(|e| Error::domain(e.to_string()))?;
    // sinc^2 <= 1, so I0 (1 + C) bounds the pattern
    let bound = model.i0 * (1.0 + model.contrast);
    let mut events = Vec::with_capacity((rate * duration * 1.01) as usize + 16);
    let mut t = gaps.sample(&mut rng);
    while t < duration {
        let frozen = FringeModel {
            phi0: model.phi0 + dephasing.offset(t),
            ..*model
        };
        let x = loop {
            let x = rng.random_range(detector.x_min..=detector.x_max);
            if rng.random::<f64>() * bound <= intensity_pattern(&frozen, x) {
                break x;
            }
        };
        let y = if detector.y_max > detector.y_min {
            rng.random_range(detector.y_min..detector.y_max)
        } else {
            detector.y_min
        };
        events.push(Event { t, x, y });
        t += gaps.sample(&mut rng);
    }
    Ok(EventList {
        events,
        duration,
        detector: *detector,
        seed,
    })
}

/// Fit the time-integrated x histogram.
///
/// The fitted contrast is divided by `sinc(pi w / s)`, the reduction that
/// bins of width `w` cause on a cosine of period `s`.
pub fn histogram_contrast(events: &EventList, bins: usize) -> Result<FringeFit> {
    let d = events.detector;
    let h = Histogram::from_samples(events.events.iter().map(|e| e.x), d.x_min, d.x_max, bins)?;
    let mut fit = fit_fringes(&h)?;
    let k = sinc(PI * h.bin_width() / fit.model.s);
    fit.model.contrast /= k;
    fit.errors[1] /= k;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> FringeModel {
        FringeModel {
            i0: 1.0,
            contrast: 0.5,
            s: 1e-3,
            phi0: 0.0,
            s1: 8e-3,
            phi1: 0.0,
        }
    }

    #[test]
    fn same_seed_same_events() {
        let m = model();
        let d = Detector::main_lobe(&m, 5e-3);
        let a = generate_events(&m, &DephasingModel::default(), 1000.0, 5.0, &d, 9).unwrap();
        let b = generate_events(&m, &DephasingModel::default(), 1000.0, 5.0, &d, 9).unwrap();
        let c = generate_events(&m, &DephasingModel::default(), 1000.0, 5.0, &d, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn events_are_ordered_and_inside() {
        let m = model();
        let d = Detector::main_lobe(&m, 5e-3);
        let ev = generate_events(&m, &DephasingModel::default(), 2000.0, 3.0, &d, 1).unwrap();
        assert!(ev.events.windows(2).all(|w| w[1].t >= w[0].t));
        assert!(ev.events.iter().all(|e| d.contains(e.x, e.y) && e.t < 3.0));
        let n = ev.len() as f64;
        // Poisson count: 6000 +- 77
        assert!((n - 6000.0).abs() < 5.0 * 6000f64.sqrt());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model();
        let d = Detector::main_lobe(&m, 5e-3);
        assert!(generate_events(&m, &DephasingModel::default(), 0.0, 1.0, &d, 0).is_err());
        assert!(generate_events(&m, &DephasingModel::default(), 1.0, -1.0, &d, 0).is_err());
        let bad = DephasingModel {
            frequency: 0.0,
            ..Default::default()
        };
        assert!(generate_events(&m, &bad, 1.0, 1.0, &d, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = model();
        let d = Detector::main_lobe(&m, 5e-3);
        let ev = generate_events(&m, &DephasingModel::default(), 1000.0, 0.5, &d, 3).unwrap();
        let mut buf = Vec::new();
        ev.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t_ns,x_mm,y_mm\n"));
        let back = EventList::read_csv(buf.as_slice(), Some(ev.duration), Some(d)).unwrap();
        assert_eq!(back.len(), ev.len());
        for (a, b) in back.events.iter().zip(&ev.events) {
            assert!((a.t - b.t).abs() <= 1e-15 * b.t.abs().max(1e-9));
            assert!((a.x - b.x).abs() <= 1e-15 * b.x.abs().max(1e-9));
        }
        assert!(EventList::read_csv("t,x,y\n".as_bytes(), None, None).is_err());
    }
}
