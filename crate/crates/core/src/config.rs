//! Flat TOML configuration.
//!
//! Every key has the form `<section>_<field>`, for example
//! `geometry_tip_radius = 2e-6` or `voltages_u_c = 200.0`. All keys are
//! optional and override a base configuration (the defaults, or a built-in
//! scenario). Values are SI units throughout.
//!
//! | section     | fields |
//! |-------------|--------|
//! | `geometry`  | see [`GeometryConfig`] |
//! | `voltages`  | `u_sat`, `u_c`, `u_ground` |
//! | `beam`      | `gamma`, `u_bp`, `magnification` (a constant; omit for the measured table) |
//! | `emission`  | `a`, `b`, `drive` (`"potential_difference"` or `"tip_voltage"`), `transmission` |
//! | `wien`      | see [`WienConfig`], plus `planted_l_c`, `planted_c0`, `planted_center`, `contrast_noise` for synthetic sweeps |
//! | `dephasing` | `amplitude`, `frequency`, `phase` |
//! | `events`    | see [`EventsConfig`] |
//! | `trace`     | see [`TraceConfig`] |
//! | `sweep`     | `parameter` (`"none"`, `"u_sat"`, `"u_c"`), `start`, `stop`, `steps`, `values` |

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::emission::FNParams;
use crate::error::{Error, Result, Violation};
use crate::events::DephasingModel;
use crate::geometry::{ElectrodeVoltages, GeometryConfig};
use crate::optics::{BeamConfig, MagnificationModel};
use crate::wien::{WienConfig, REFERENCE_COHERENCE_LENGTH};

/// Wien filter plus the parameters of synthetic sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienSection {
    #[serde(flatten)]
    pub filter: WienConfig,
    /// Coherence length planted in synthetic sweeps (m).
    pub planted_l_c: f64,
    pub planted_c0: f64,
    /// Envelope centre of synthetic sweeps (V).
    pub planted_center: f64,
    /// Standard deviation of the Gaussian noise added to each contrast.
    pub contrast_noise: f64,
}

impl Default for WienSection {
    fn default() -> Self {
        Self {
            filter: WienConfig::default(),
            planted_l_c: REFERENCE_COHERENCE_LENGTH,
            planted_c0: 0.716,
            planted_center: 0.0,
            contrast_noise: 0.015,
        }
    }
}

/// Synthetic detector data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventsConfig {
    /// Detector count rate (Hz).
    pub rate: f64,
    /// Expected number of events per interferogram.
    pub count: f64,
    /// Planted unperturbed contrast.
    pub contrast: f64,
    /// Envelope width `s1` in fringe periods.
    pub envelope_periods: f64,
    /// Histogram bins across the detector.
    pub bins: usize,
    /// Half height of the detector along the fringes (m).
    pub detector_half_height: f64,
    /// Envelope fraction used by the fringe count.
    pub count_threshold: f64,
}

impl Default for EventsConfig {
    fn default() -> Self {
        Self {
            rate: 1000.0,
            count: 3e5,
            contrast: 0.535,
            envelope_periods: 8.0,
            bins: 128,
            detector_half_height: 10e-3,
            count_threshold: 0.1,
        }
    }
}

/// Field solve and ray tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub fan_count: usize,
    /// rad
    pub fan_half_angle: f64,
    /// Launch circle radius in grid cells.
    pub launch_radius_cells: f64,
    pub launch_ke_ev: f64,
    pub solve_max_iterations: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            fan_count: 16,
            fan_half_angle: 2.5,
            launch_radius_cells: 2.0,
            launch_ke_ev: 0.0,
            solve_max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    None,
    USat,
    UC,
}

/// Either `steps` evenly spaced values from `start` to `stop`, or the
/// explicit `values` list when it is non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::None,
            start: 0.0,
            stop: 0.0,
            steps: 1,
            values: Vec::new(),
        }
    }
}

impl SweepConfig {
    pub fn points(&self) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match self.steps {
            0 => vec![],
            1 => vec![self.start],
            n => (0..n)
                .map(|k| {
                    let f = k as f64 / (n - 1) as f64;
                    // exact at both ends
                    self.start * (1.0 - f) + self.stop * f
                })
                .collect(),
        }
    }

    /// Voltages of one sweep step.
    pub fn apply(&self, base: &ElectrodeVoltages, value: f64) -> ElectrodeVoltages {
        match self.parameter {
            SweepParameter::None => *base,
            SweepParameter::USat => ElectrodeVoltages { u_sat: value, ..*base },
            SweepParameter::UC => ElectrodeVoltages { u_c: value, ..*base },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub geometry: GeometryConfig,
    pub voltages: ElectrodeVoltages,
    pub beam: BeamConfig,
    pub emission: FNParams,
    pub wien: WienSection,
    pub dephasing: DephasingModel,
    pub events: EventsConfig,
    pub trace: TraceConfig,
    pub sweep: SweepConfig,
}

const SECTIONS: [&str; 9] = [
    "geometry",
    "voltages",
    "beam",
    "emission",
    "wien",
    "dephasing",
    "events",
    "trace",
    "sweep",
];

impl Config {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.geometry.violations();
        v.extend(self.voltages.violations());
        v.extend(self.beam.violations());
        v.extend(self.emission.violations());
        v.extend(self.wien.filter.violations());
        v.extend(self.dephasing.violations());
        let positive = |key: &str, x: f64, v: &mut Vec<Violation>| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(Violation::new(key, "must be positive"));
            }
        };
        positive("wien_planted_l_c", self.wien.planted_l_c, &mut v);
        if !(self.wien.planted_c0 > 0.0 && self.wien.planted_c0 <= 1.0) {
            v.push(Violation::new("wien_planted_c0", "must lie in (0, 1]"));
        }
        if !(self.wien.contrast_noise >= 0.0) {
            v.push(Violation::new("wien_contrast_noise", "must be non-negative"));
        }
        if !self.wien.planted_center.is_finite() {
            v.push(Violation::new("wien_planted_center", "must be finite"));
        }
        let e = &self.events;
        positive("events_rate", e.rate, &mut v);
        positive("events_count", e.count, &mut v);
        positive("events_envelope_periods", e.envelope_periods, &mut v);
        positive("events_detector_half_height", e.detector_half_height, &mut v);
        if !(0.0..=1.0).contains(&e.contrast) {
            v.push(Violation::new("events_contrast", "must lie in [0, 1]"));
        }
        if e.bins < 16 {
            v.push(Violation::new("events_bins", "need at least 16 bins"));
        }
        if !(e.count_threshold > 0.0 && e.count_threshold < 1.0) {
            v.push(Violation::new("events_count_threshold", "must lie in (0, 1)"));
        }
        let t = &self.trace;
        if t.fan_count == 0 {
            v.push(Violation::new("trace_fan_count", "must be at least 1"));
        }
        if !(t.fan_half_angle >= 0.0 && t.fan_half_angle <= std::f64::consts::PI) {
            v.push(Violation::new("trace_fan_half_angle", "must lie in [0, pi]"));
        }
        positive("trace_launch_radius_cells", t.launch_radius_cells, &mut v);
        if !(t.launch_ke_ev >= 0.0) {
            v.push(Violation::new("trace_launch_ke_ev", "must be non-negative"));
        }
        if t.solve_max_iterations == 0 {
            v.push(Violation::new("trace_solve_max_iterations", "must be at least 1"));
        }
        let s = &self.sweep;
        if s.steps < 1 && s.values.is_empty() {
            v.push(Violation::new("sweep_steps", "must be at least 1"));
        }
        if !s.values.iter().all(|x| x.is_finite()) {
            v.push(Violation::new("sweep_values", "must be finite"));
        }
        if !(s.start.is_finite() && s.stop.is_finite()) {
            v.push(Violation::new("sweep_start", "sweep bounds must be finite"));
        }
        v
    }

    /// Apply the keys of a flat TOML document on top of `self`. Returns the
    /// result with every key and invariant violation; fails only on TOML
    /// syntax errors.
    pub fn overlay(&self, text: &str) -> Result<(Config, Vec<Violation>)> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut bad = Vec::new();
        let mut by_section: Vec<Vec<(String, Value)>> = vec![Vec::new(); SECTIONS.len()];
        for (key, value) in doc {
            if value.is_table() {
                bad.push(Violation::new(
                    &key,
                    "tables are not supported; use flat <section>_<field> keys",
                ));
                continue;
            }
            match SECTIONS
                .iter()
                .position(|s| key.strip_prefix(s).is_some_and(|rest| rest.starts_with('_')))
            {
                Some(i) => by_section[i].push((key[SECTIONS[i].len() + 1..].to_owned(), value)),
                None => bad.push(Violation::new(&key, "unknown key")),
            }
        }
        let mut c = self.clone();
        let mut it = by_section.into_iter();
        let mut next = || it.next().expect("one entry per section");
        c.geometry = overlay_section("geometry", &c.geometry, next(), &mut bad);
        c.voltages = overlay_section("voltages", &c.voltages, next(), &mut bad);
        c.beam = overlay_beam(&c.beam, next(), &mut bad);
        c.emission = overlay_section("emission", &c.emission, next(), &mut bad);
        c.wien = overlay_section("wien", &c.wien, next(), &mut bad);
        c.dephasing = overlay_section("dephasing", &c.dephasing, next(), &mut bad);
        c.events = overlay_section("events", &c.events, next(), &mut bad);
        c.trace = overlay_section("trace", &c.trace, next(), &mut bad);
        c.sweep = overlay_section("sweep", &c.sweep, next(), &mut bad);
        if bad.is_empty() {
            bad = c.violations();
        }
        Ok((c, bad))
    }

    /// Flat TOML with every key except a tabulated magnification.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let mut put = |section: &str, table: Table| {
            out.push_str(&format!("# {section}\n"));
            for (k, v) in table {
                out.push_str(&format!("{section}_{k} = {v}\n"));
            }
            out.push('\n');
        };
        put("geometry", to_table(&self.geometry));
        put("voltages", to_table(&self.voltages));
        let mut beam = Table::new();
        beam.insert("gamma".into(), Value::Float(self.beam.gamma));
        beam.insert("u_bp".into(), Value::Float(self.beam.u_bp));
        if let MagnificationModel::Constant(m) = self.beam.magnification {
            beam.insert("magnification".into(), Value::Float(m));
        }
        put("beam", beam);
        put("emission", to_table(&self.emission));
        put("wien", to_table(&self.wien));
        put("dephasing", to_table(&self.dephasing));
        put("events", to_table(&self.events));
        put("trace", to_table(&self.trace));
        put("sweep", to_table(&self.sweep));
        out
    }
}

fn to_table<T: Serialize>(x: &T) -> Table {
    Table::try_from(x).expect("config sections serialize to tables")
}

/// Coerce `value` to the TOML type of `existing`.
fn coerce(existing: &Value, value: Value) -> std::result::Result<Value, String> {
    match (existing, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9e15 => Ok(Value::Integer(f as i64)),
        (Value::Integer(_), Value::Integer(i)) if i < 0 => Err("must be a non-negative integer".into()),
        (Value::Array(_), Value::Array(items)) => items
            .into_iter()
            .map(|x| match x {
                Value::Integer(i) => Ok(Value::Float(i as f64)),
                Value::Float(f) => Ok(Value::Float(f)),
                _ => Err("expected an array of numbers".to_string()),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Value::Array),
        (e, v) if std::mem::discriminant(e) == std::mem::discriminant(&v) => Ok(v),
        (e, _) => Err(format!("expected {}", e.type_str())),
    }
}

fn overlay_section<T: Serialize + DeserializeOwned + Clone>(
    section: &str,
    base: &T,
    keys: Vec<(String, Value)>,
    bad: &mut Vec<Violation>,
) -> T {
    if keys.is_empty() {
        return base.clone();
    }
    let mut table = to_table(base);
    let before = bad.len();
    for (field, value) in keys {
        let key = format!("{section}_{field}");
        match table.get(&field) {
            None => bad.push(Violation::new(key, "unknown key")),
            Some(existing) => match coerce(existing, value) {
                Ok(v) => {
                    table.insert(field, v);
                }
                Err(msg) => bad.push(Violation::new(key, msg)),
            },
        }
    }
    if bad.len() > before {
        return base.clone();
    }
    match Value::Table(table).try_into() {
        Ok(t) => t,
        Err(e) => {
            bad.push(Violation::new(section, e.to_string()));
            base.clone()
        }
    }
}

fn overlay_beam(base: &BeamConfig, keys: Vec<(String, Value)>, bad: &mut Vec<Violation>) -> BeamConfig {
    let mut b = base.clone();
    for (field, value) in keys {
        let key = format!("beam_{field}");
        let Some(x) = value.as_float().or_else(|| value.as_integer().map(|i| i as f64)) else {
            bad.push(Violation::new(key, "expected a number"));
            continue;
        };
        match field.as_str() {
            "gamma" => b.gamma = x,
            "u_bp" => b.u_bp = x,
            "magnification" => b.magnification = MagnificationModel::Constant(x),
            _ => bad.push(Violation::new(key, "unknown key")),
        }
    }
    b
}

/// Read and overlay a config file; any violation is an error.
pub fn load_config(path: &Path, base: &Config) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    let (c, bad) = base.overlay(&text)?;
    if bad.is_empty() {
        Ok(c)
    } else {
        Err(Error::Invalid(bad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub path: PathBuf,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a config file against the defaults. Unreadable or syntactically
/// invalid files are errors; everything else is reported as violations.
pub fn validate_config(path: &Path) -> Result<ValidationReport> {
    let text = std::fs::read_to_string(path)?;
    let (_, violations) = Config::default().overlay(&text)?;
    Ok(ValidationReport {
        schema_version: crate::SCHEMA_VERSION,
        path: path.to_owned(),
        violations,
    })
}
