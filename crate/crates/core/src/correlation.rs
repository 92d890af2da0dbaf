//! Second-order correlation of detector events.
//!
//! For fringes whose phase wobbles as `A sin(2 pi nu t)`, the time-averaged
//! pair density at spatial separation `u` and time separation `tau` is
//! `P(u) * (1 + a(tau) cos(2 pi u / s))` with
//! `a(tau) = (C^2 / 2) * J0(2 A sin(pi nu tau))`. The estimator bins pairs
//! in `(u, tau)`, extracts `a` slice by slice, and fits `C` and `A`.
//!
//! `P(u)` is taken from the autocorrelation of the single-event histogram
//! after a boxcar over one fringe period has removed its fringes.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventList;
use crate::exec::Exec;
use crate::lm::{self, LeastSquares, LmOptions};
use crate::special::{bessel_j0, bessel_j1, sinc};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Options {
    /// Spatial window `|u| <= u_window_periods * s`.
    pub u_window_periods: f64,
    pub u_bins_per_period: usize,
    /// Time window `tau <= tau_window_periods / min(frequency grid)`.
    pub tau_window_periods: f64,
    pub tau_bins: usize,
    /// Slices with fewer pairs are skipped.
    pub min_slice_pairs: u64,
    /// Reduced chi-square above which no grid frequency is accepted.
    pub chi2_max: f64,
    /// Contrast uncertainty above which the result is flagged.
    pub low_statistics_error: f64,
    pub min_events: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for G2Options {
    fn default() -> Self {
        Self {
            u_window_periods: 2.0,
            u_bins_per_period: 16,
            tau_window_periods: 3.0,
            tau_bins: 60,
            min_slice_pairs: 100,
            chi2_max: 5.0,
            low_statistics_error: 0.05,
            min_events: 10_000,
            exec: Exec::default(),
        }
    }
}

/// Frequencies from 40 to 60 Hz in 0.25 Hz steps.
pub fn default_frequency_grid() -> Vec<f64> {
    (0..=80).map(|k| 40.0 + 0.25 * k as f64).collect()
}

/// Pair counts over `(u, tau)`, row-major in `tau`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairHistogram {
    /// Bins `-half..=half` in `u`.
    pub half: usize,
    pub tau_bins: usize,
    pub counts: Vec<u64>,
}

impl PairHistogram {
    pub fn new(half: usize, tau_bins: usize) -> Self {
        Self {
            half,
            tau_bins,
            counts: vec![0; (2 * half + 1) * tau_bins],
        }
    }

    pub fn u_bins(&self) -> usize {
        2 * self.half + 1
    }

    pub fn slice(&self, tau: usize) -> &[u64] {
        let n = self.u_bins();
        &self.counts[tau * n..(tau + 1) * n]
    }

    /// Element-wise sum; associative and commutative.
    pub fn merge(mut self, other: &PairHistogram) -> Self {
        assert_eq!((self.half, self.tau_bins), (other.half, other.tau_bins));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin every time-ordered pair inside the window. `u_width` and
/// `tau_width` are the bin widths; `u` bins are centred on multiples of
/// `u_width`.
pub fn accumulate_pairs(
    events: &EventList,
    u_width: f64,
    half: usize,
    tau_width: f64,
    tau_bins: usize,
    exec: Exec,
) -> PairHistogram {
    let ev = &events.events;
    let tau_max = tau_width * tau_bins as f64;
    let n_u = 2 * half + 1;
    let limit = half as f64 + 0.5;
    let scan = |mut h: PairHistogram, i: usize| {
        let a = ev[i];
        for b in &ev[i + 1..] {
            let tau = b.t - a.t;
            if tau >= tau_max {
                break;
            }
            let m = (b.x - a.x) / u_width;
            if m.abs() < limit {
                let mu = (m.round() as i64 + half as i64) as usize;
                let k = ((tau / tau_width) as usize).min(tau_bins - 1);
                h.counts[k * n_u + mu] += 1;
            }
        }
        h
    };
    exec.fold_range(
        ev.len(),
        || PairHistogram::new(half, tau_bins),
        scan,
        |a, b| a.merge(&b),
    )
}

/// Fraction of pairs expected in each `u` bin from the envelope alone.
fn envelope_pair_profile(events: &EventList, u_width: f64, half: usize, per_period: usize) -> Vec<f64> {
    let d = events.detector;
    let n = (((d.x_max - d.x_min) / u_width).ceil() as usize).max(1);
    let mut singles = vec![0.0; n];
    for e in &events.events {
        let k = (((e.x - d.x_min) / u_width) as usize).min(n - 1);
        singles[k] += 1.0;
    }
    // boxcar over one fringe period, zero outside the detector
    let pad = per_period;
    let mut smooth = vec![0.0; n + 2 * pad];
    for (k, s) in smooth.iter_mut().enumerate() {
        for l in 0..per_period {
            let idx = k as i64 + l as i64 - (pad + per_period / 2) as i64;
            if idx >= 0 && (idx as usize) < n {
                *s += singles[idx as usize];
            }
        }
    }
    let mut prof: Vec<f64> = (0..=2 * half)
        .map(|mu| {
            let lag = mu as i64 - half as i64;
            let mut acc = 0.0;
            for k in 0..smooth.len() {
                let j = k as i64 + lag;
                if j >= 0 && (j as usize) < smooth.len() {
                    acc += smooth[k] * smooth[j as usize];
                }
            }
            acc
        })
        .collect();
    let total: f64 = prof.iter().sum();
    prof.iter_mut().for_each(|p| *p /= total);
    prof
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceAmplitude {
    /// Bin centre (s).
    pub tau: f64,
    /// Amplitude of the fringe-period cosine in the normalized pair density.
    pub amplitude: f64,
    pub error: f64,
    pub pairs: u64,
}

/// Cosine amplitude of one slice by weighted linear least squares on
/// `g0 + g2 u^2 + a cos(k u) + b sin(k u)`.
fn slice_amplitude(counts: &[u64], profile: &[f64], u_width: f64, s: f64, per_period: usize) -> Option<(f64, f64)> {
    let n_tau: u64 = counts.iter().sum();
    let half = (counts.len() - 1) / 2;
    let k = 2.0 * PI / s;
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for (mu, (&c, &p)) in counts.iter().zip(profile).enumerate() {
        let expect = n_tau as f64 * p;
        if expect <= 0.0 {
            continue;
        }
        let u = (mu as f64 - half as f64) * u_width;
        let r = c as f64 / expect;
        let w = expect; // 1 / sigma^2 of r
        let row = Vector4::new(1.0, (u / s).powi(2), (k * u).cos(), (k * u).sin());
        ata += w * row * row.transpose();
        atb += w * r * row;
    }
    let inv = ata.try_inverse()?;
    let sol = inv * atb;
    let g0 = sol[0];
    if !(g0 > 0.0) {
        return None;
    }
    // the bin average of cos(k u) over one bin is sinc(pi / per_period)
    let corr = sinc(PI / per_period as f64);
    Some((sol[2] / g0 / corr, inv[(2, 2)].sqrt() / g0 / corr))
}

struct DephasingFit<'a> {
    slices: &'a [SliceAmplitude],
    tau_width: f64,
    nu: f64,
}

const SUBSAMPLES: usize = 8;
/// Amplitude grid for ranking frequencies: 0 to 1.2 pi.
const PROFILE_STEPS: usize = 24;
const PROFILE_MAX: f64 = 1.2 * PI;
const REFINED_FREQUENCIES: usize = 3;

impl DephasingFit<'_> {
    /// Bin-averaged `J0(2 A sin(pi nu tau))` and its derivative in `A`.
    fn envelope(&self, a: f64, tau: f64) -> (f64, f64) {
        let (mut j, mut dj) = (0.0, 0.0);
        for q in 0..SUBSAMPLES {
            let t = tau + self.tau_width * ((q as f64 + 0.5) / SUBSAMPLES as f64 - 0.5);
            let w = 2.0 * (PI * self.nu * t).sin();
            j += bessel_j0(a * w);
            dj -= w * bessel_j1(a * w);
        }
        (j / SUBSAMPLES as f64, dj / SUBSAMPLES as f64)
    }

    fn model(&self, c: f64, a: f64, tau: f64) -> f64 {
        0.5 * c * c * self.envelope_value(a, tau)
    }

    /// Least-squares cost at fixed `A` with the best `C`, and that `C`.
    fn profile(&self, a: f64) -> (f64, f64) {
        let (mut fy, mut ff, mut yy) = (0.0, 0.0, 0.0);
        for s in self.slices {
            let w = s.error.powi(-2);
            let f = self.envelope_value(a, s.tau);
            fy += w * f * s.amplitude;
            ff += w * f * f;
            yy += w * s.amplitude * s.amplitude;
        }
        if !(ff > 0.0) {
            return (yy, 0.0);
        }
        let k = (fy / ff).max(0.0);
        (yy - 2.0 * k * fy + k * k * ff, (2.0 * k).sqrt().min(1.0))
    }

    fn envelope_value(&self, a: f64, tau: f64) -> f64 {
        (0..SUBSAMPLES)
            .map(|q| {
                let t = tau + self.tau_width * ((q as f64 + 0.5) / SUBSAMPLES as f64 - 0.5);
                bessel_j0(2.0 * a * (PI * self.nu * t).sin())
            })
            .sum::<f64>()
            / SUBSAMPLES as f64
    }
}

impl LeastSquares for DephasingFit<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        self.slices.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(self.slices) {
            *o = (s.amplitude - self.model(p[0], p[1], s.tau)) / s.error;
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        let c = p[0];
        for (i, s) in self.slices.iter().enumerate() {
            let (j, dj) = self.envelope(p[1], s.tau);
            out[2 * i] = -c * j / s.error;
            out[2 * i + 1] = -0.5 * c * c * dj / s.error;
        }
    }
    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].clamp(0.0, 1.0);
        p[1] = p[1].max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub schema_version: u32,
    /// Unperturbed fringe contrast.
    pub contrast: f64,
    pub contrast_error: f64,
    /// Dephasing amplitude (rad).
    pub amplitude: f64,
    pub amplitude_error: f64,
    /// Best grid frequency (Hz).
    pub frequency: f64,
    pub reduced_chi2: f64,
    /// The contrast uncertainty exceeds the configured threshold.
    pub low_statistics: bool,
    pub events: usize,
    pub pairs: u64,
    pub slices: Vec<SliceAmplitude>,
}

pub fn g2_contrast(events: &EventList, s: f64, frequencies: &[f64], opts: &G2Options) -> Result<G2Result> {
    if events.len() < opts.min_events {
        return Err(Error::Statistics(format!(
            "{} events is below the minimum of {}",
            events.len(),
            opts.min_events
        )));
    }
    if !(s > 0.0) {
        return Err(Error::domain("fringe spacing must be positive"));
    }
    let nu_min = frequencies.iter().cloned().fold(f64::INFINITY, f64::min);
    if frequencies.is_empty() || !(nu_min > 0.0) {
        return Err(Error::domain("frequency grid must be non-empty and positive"));
    }
    let per = opts.u_bins_per_period.max(4);
    let u_width = s / per as f64;
    let half = (opts.u_window_periods * per as f64).round() as usize;
    let tau_width = opts.tau_window_periods / nu_min / opts.tau_bins as f64;

    let pairs = accumulate_pairs(events, u_width, half, tau_width, opts.tau_bins, opts.exec);
    let profile = envelope_pair_profile(events, u_width, half, per);

    let slices: Vec<SliceAmplitude> = (0..opts.tau_bins)
        .filter_map(|k| {
            let counts = pairs.slice(k);
            let n: u64 = counts.iter().sum();
            if n < opts.min_slice_pairs {
                return None;
            }
            let (amplitude, error) = slice_amplitude(counts, &profile, u_width, s, per)?;
            (error > 0.0 && error.is_finite()).then_some(SliceAmplitude {
                tau: (k as f64 + 0.5) * tau_width,
                amplitude,
                error,
                pairs: n,
            })
        })
        .collect();
    if slices.len() < 4 {
        return Err(Error::Statistics(format!(
            "only {} usable correlation slices",
            slices.len()
        )));
    }

    // Rank grid frequencies by a profile over A with C^2 solved in closed
    // form, then refine the best few with full fits.
    let ranked = opts.exec.map(frequencies, |&nu| {
        let problem = DephasingFit {
            slices: &slices,
            tau_width,
            nu,
        };
        (0..=PROFILE_STEPS)
            .map(|k| {
                let a = PROFILE_MAX * k as f64 / PROFILE_STEPS as f64;
                let (cost, c) = problem.profile(a);
                (cost, nu, c, a)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .expect("non-empty profile")
    });
    let mut ranked = ranked;
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (nu, rep) = ranked
        .iter()
        .take(REFINED_FREQUENCIES)
        .map(|&(_, nu, c, a)| {
            let problem = DephasingFit {
                slices: &slices,
                tau_width,
                nu,
            };
            (
                nu,
                lm::minimize(&problem, &[c.clamp(0.01, 1.0), a], LmOptions::default()),
            )
        })
        .reduce(|a, b| if b.1.cost < a.1.cost { b } else { a })
        .expect("grid is non-empty");
    let problem = DephasingFit {
        slices: &slices,
        tau_width,
        nu,
    };
    if rep.reduced_chi2 > opts.chi2_max {
        return Err(Error::FrequencySearch(rep.reduced_chi2));
    }
    let scale = rep.reduced_chi2.max(1.0);
    let errors = rep
        .covariance
        .as_ref()
        .map(|c| ((c[(0, 0)] * scale).sqrt(), (c[(1, 1)] * scale).sqrt()))
        .filter(|&(ec, ea)| ec.is_finite() && ea.is_finite() && ea < PI);
    let (contrast_error, amplitude_error) = match errors {
        Some(e) => e,
        None => {
            // amplitude unresolved near zero; contrast error from a one-parameter fit
            let (c, a) = (rep.params[0], rep.params[1]);
            let info: f64 = slices
                .iter()
                .map(|sl| {
                    let d = 2.0 * problem.model(c, a, sl.tau) / c.max(1e-12);
                    (d / sl.error).powi(2)
                })
                .sum();
            ((scale / info).sqrt(), f64::NAN)
        }
    };
    Ok(G2Result {
        schema_version: crate::SCHEMA_VERSION,
        contrast: rep.params[0],
        contrast_error,
        amplitude: rep.params[1],
        amplitude_error,
        frequency: nu,
        reduced_chi2: rep.reduced_chi2,
        low_statistics: !(contrast_error <= opts.low_statistics_error),
        events: events.len(),
        pairs: pairs.total(),
        slices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Detector, Event};

    fn list(events: Vec<Event>) -> EventList {
        EventList {
            events,
            duration: 1.0,
            detector: Detector {
                x_min: 0.0,
                x_max: 1.0,
                y_min: 0.0,
                y_max: 0.0,
            },
            seed: 0,
        }
    }

    #[test]
    fn pairs_land_in_expected_bins() {
        let ev = list(vec![
            Event { t: 0.0, x: 0.5, y: 0.0 },
            Event {
                t: 0.15,
                x: 0.52,
                y: 0.0,
            },
            Event {
                t: 0.37,
                x: 0.40,
                y: 0.0,
            },
        ]);
        let h = accumulate_pairs(&ev, 0.01, 20, 0.1, 5, Exec::Sequential);
        // (0,1): u = +2 bins, tau bin 1; (0,2): u = -10, tau bin 3; (1,2): u = -12, tau bin 2
        assert_eq!(h.total(), 3);
        assert_eq!(h.slice(1)[22], 1);
        assert_eq!(h.slice(3)[10], 1);
        assert_eq!(h.slice(2)[8], 1);
    }

    #[test]
    fn window_excludes_far_pairs() {
        let ev = list(vec![Event { t: 0.0, x: 0.0, y: 0.0 }, Event { t: 0.9, x: 0.0, y: 0.0 }]);
        assert_eq!(accumulate_pairs(&ev, 0.01, 5, 0.1, 5, Exec::Sequential).total(), 0);
        let ev = list(vec![Event { t: 0.0, x: 0.0, y: 0.0 }, Event { t: 0.1, x: 0.5, y: 0.0 }]);
        assert_eq!(accumulate_pairs(&ev, 0.01, 5, 0.1, 5, Exec::Sequential).total(), 0);
    }

    #[test]
    fn too_few_events() {
        let ev = list(vec![Event { t: 0.0, x: 0.0, y: 0.0 }]);
        assert!(matches!(
            g2_contrast(&ev, 1e-3, &default_frequency_grid(), &G2Options::default()),
            Err(Error::Statistics(_))
        ));
    }
}
