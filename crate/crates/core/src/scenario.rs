//! End-to-end runs that chain the modules over a voltage sweep.
//!
//! A [`Scenario`] is a base [`Config`] plus the set of pipeline stages to
//! run at every sweep step. [`run_scenario`] executes the steps in order,
//! records every derived quantity in a [`RunReport`] and, when given an
//! output directory, writes one CSV per data product plus `report.json`.
//!
//! A failing step records a machine-readable error and the sweep carries on
//! unless `fail_fast` is set. Event data are always written to CSV and read
//! back before analysis, so re-analysing the written files reproduces the
//! report exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Config, SweepParameter};
use crate::correlation::{default_frequency_grid, g2_contrast, G2Options, G2Result};
use crate::error::{Error, Result};
use crate::events::{generate_events, histogram_contrast, DephasingModel, Detector, EventList};
use crate::exec::Exec;
use crate::geometry::{build_geometry, default_tolerance, solve_laplace_with, ElectrodeVoltages};
use crate::optics::{count_fringes, BeamParams, FringeFit, FringeModel};
use crate::trajectory::{apex_start, classify_bundle, integrate_trajectory, terminal_energy, LaunchFan, TraceOptions};
use crate::wien::{analyze_wien_sweep, read_sweep_csv, synthetic_sweep, write_sweep_csv};

/// Pipeline stages run at each sweep step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stages {
    /// Field solve, on-axis trace from the apex and a launch fan.
    pub trace: bool,
    /// Emission rate and interferometer forward model.
    pub beam: bool,
    /// Synthetic events with histogram and correlation analysis.
    pub events: bool,
    /// Synthetic Wien sweep and coherence analysis.
    pub wien: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub stages: Stages,
    pub config: Config,
}

impl Scenario {
    fn new(name: &str, description: &str, stages: Stages, edit: impl FnOnce(&mut Config)) -> Self {
        let mut config = Config::default();
        edit(&mut config);
        Self {
            name: name.into(),
            description: description.into(),
            stages,
            config,
        }
    }
}

const TRACE: Stages = Stages {
    trace: true,
    beam: false,
    events: false,
    wien: false,
};
const BEAM_EVENTS: Stages = Stages {
    trace: false,
    beam: true,
    events: true,
    wien: false,
};

/// The built-in scenarios.
pub fn list_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::new(
            "fig4a",
            "Field and trajectories at U_SAT = -1600 V, U_c = +200 V",
            TRACE,
            |c| c.voltages = ElectrodeVoltages::new(-1600.0, 200.0),
        ),
        Scenario::new(
            "fig4c",
            "Field and trajectories at U_SAT = -600 V, U_c = +1378 V, with back-deflection",
            TRACE,
            |c| c.voltages = ElectrodeVoltages::new(-600.0, 1378.0),
        ),
        Scenario::new(
            "fig2a_c",
            "Tip-voltage sweep against grounded apertures: rate, fringe spacing, contrast",
            BEAM_EVENTS,
            |c| {
                c.voltages = ElectrodeVoltages::new(-1560.0, 0.0);
                c.sweep.parameter = SweepParameter::USat;
                c.sweep.start = -1560.0;
                c.sweep.stop = -1800.0;
                c.sweep.steps = 7;
            },
        ),
        Scenario::new(
            "fig2d_f",
            "Counter-voltage sweep at U_SAT = -1600 V: rate, fringe spacing, contrast",
            BEAM_EVENTS,
            |c| {
                c.voltages = ElectrodeVoltages::new(-1600.0, -119.7);
                c.sweep.parameter = SweepParameter::UC;
                c.sweep.start = -119.7;
                c.sweep.stop = 199.7;
                c.sweep.steps = 7;
            },
        ),
        Scenario::new(
            "interferogram_pair",
            "Interferograms at U_c = -119.7 V and +199.7 V: raw and corrected contrast, fringe count",
            BEAM_EVENTS,
            |c| {
                c.voltages = ElectrodeVoltages::new(-1600.0, -119.7);
                c.sweep.parameter = SweepParameter::UC;
                c.sweep.values = vec![-119.7, 199.7];
            },
        ),
        Scenario::new(
            "wien_sweep",
            "Wien-filter contrast sweeps at U_c = 0, 100.2 and 199.7 V: coherence length and energy width",
            Stages {
                beam: true,
                wien: true,
                ..Stages::default()
            },
            |c| {
                c.voltages = ElectrodeVoltages::new(-1600.0, 0.0);
                c.sweep.parameter = SweepParameter::UC;
                c.sweep.values = vec![0.0, 100.2, 199.7];
            },
        ),
        Scenario::new(
            "lowenergy_600eV",
            "600 eV operation at U_c = +1378 V: terminal energy, magnification, dephasing-corrected contrast",
            Stages {
                trace: true,
                beam: true,
                events: true,
                wien: false,
            },
            |c| {
                c.voltages = ElectrodeVoltages::new(-600.0, 1378.0);
                c.events.rate = 1138.0;
                c.events.contrast = 0.377;
                c.dephasing = DephasingModel {
                    amplitude: 0.435 * PI,
                    ..DephasingModel::default()
                };
            },
        ),
    ]
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    list_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.into()))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Artifacts go to `out/<scenario>/`; nothing is written when `None`.
    pub out: Option<PathBuf>,
    pub fail_fast: bool,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

impl From<Error> for ErrorRecord {
    fn from(e: Error) -> Self {
        Self::from(&e)
    }
}

type StepResult<T = ()> = std::result::Result<T, ErrorRecord>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub u_sat_v: f64,
    pub u_c_v: f64,
    pub seed: u64,
    /// Derived numbers, keyed with their unit.
    pub quantities: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, String>,
    /// Files written by this step, relative to the scenario directory.
    pub artifacts: Vec<String>,
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub steps: Vec<StepRecord>,
    /// Quantities that compare steps.
    pub summary: BTreeMap<String, f64>,
    /// Steps not run because an earlier one failed under fail-fast.
    pub skipped_steps: usize,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.skipped_steps == 0 && self.steps.iter().all(|s| s.error.is_none())
    }

    /// Values of one quantity over the steps that produced it.
    pub fn series(&self, key: &str) -> Vec<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.quantities.get(key).copied())
            .collect()
    }
}

/// Seed of step `index` of a scenario, decorrelated from other steps and
/// scenarios. Stable across platforms and releases.
pub fn step_seed(seed: u64, scenario: &str, index: usize) -> u64 {
    // FNV-1a over the name
    let name = scenario.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    });
    seed ^ name ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let bad = scenario.config.violations();
    if !bad.is_empty() {
        return Err(Error::Invalid(bad));
    }
    let dir = match &opts.out {
        Some(out) => {
            let d = out.join(&scenario.name);
            std::fs::create_dir_all(&d)?;
            Some(d)
        }
        None => None,
    };
    let cfg = &scenario.config;
    let points = cfg.sweep.points();
    let mut steps = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for (index, &value) in points.iter().enumerate() {
        let v = cfg.sweep.apply(&cfg.voltages, value);
        let mut rec = StepRecord {
            index,
            u_sat_v: v.u_sat,
            u_c_v: v.u_c,
            seed: step_seed(opts.seed, &scenario.name, index),
            ..StepRecord::default()
        };
        let result = run_step(scenario, &v, &mut rec, dir.as_deref(), opts.exec);
        let failed = result.is_err();
        rec.error = result.err();
        steps.push(rec);
        if failed && opts.fail_fast {
            skipped = points.len() - index - 1;
            break;
        }
    }
    let mut report = RunReport {
        schema_version: crate::SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        description: scenario.description.clone(),
        seed: opts.seed,
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        steps,
        summary: BTreeMap::new(),
        skipped_steps: skipped,
    };
    report.summary = summarize(&report);
    if let Some(d) = &dir {
        let f = std::fs::File::create(d.join("report.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &report)?;
    }
    Ok(report)
}

fn run_step(
    scenario: &Scenario,
    v: &ElectrodeVoltages,
    rec: &mut StepRecord,
    dir: Option<&Path>,
    exec: Exec,
) -> StepResult {
    let cfg = &scenario.config;
    let stages = scenario.stages;
    let tag = format!("step{:02}", rec.index);
    let mut out = Artifacts { dir, tag, rec };
    if stages.trace {
        trace_stage(cfg, v, &mut out, exec)?;
    }
    if stages.beam || stages.events || stages.wien {
        let beam = beam_stage(cfg, v, out.rec)?;
        if stages.events {
            events_stage(cfg, &beam, &mut out)?;
        }
        if stages.wien {
            wien_stage(cfg, &beam, &mut out)?;
        }
    }
    Ok(())
}

struct Artifacts<'a> {
    dir: Option<&'a Path>,
    tag: String,
    rec: &'a mut StepRecord,
}

impl Artifacts<'_> {
    fn put(&mut self, key: &str, value: f64) {
        self.rec.quantities.insert(key.into(), value);
    }

    /// Write a file named `<step>_<suffix>` if an output directory is set.
    fn write(&mut self, suffix: &str, f: impl FnOnce(&mut dyn std::io::Write) -> Result<()>) -> Result<()> {
        if let Some(d) = self.dir {
            let name = format!("{}_{suffix}", self.tag);
            let mut w = std::io::BufWriter::new(std::fs::File::create(d.join(&name))?);
            f(&mut w)?;
            std::io::Write::flush(&mut w)?;
            self.rec.artifacts.push(name);
        }
        Ok(())
    }
}

fn trace_stage(cfg: &Config, v: &ElectrodeVoltages, out: &mut Artifacts, exec: Exec) -> StepResult {
    let geometry = build_geometry(&cfg.geometry)?;
    let grid = solve_laplace_with(&geometry, v, default_tolerance(v), cfg.trace.solve_max_iterations, exec)?;
    out.put("solve_iterations", grid.iterations as f64);
    out.put("solve_residual_V", grid.residual);
    out.write("potential.csv", |w| grid.write_csv(w))?;

    let traj = integrate_trajectory(&grid, apex_start(&geometry), &TraceOptions::default())?;
    out.rec
        .labels
        .insert("apex_termination".into(), traj.termination.label(&grid));
    out.put("apex_max_energy_error", traj.max_energy_error);
    out.put("apex_flight_time_s", traj.last().t);
    out.write("apex_trajectory.csv", |w| traj.write_csv(w))?;
    out.put("terminal_energy_eV", terminal_energy(&traj)?);

    let fan = LaunchFan {
        count: cfg.trace.fan_count,
        half_angle: cfg.trace.fan_half_angle,
        launch_radius: cfg.trace.launch_radius_cells * geometry.grid.h,
        ke_ev: cfg.trace.launch_ke_ev,
    };
    let bundle = classify_bundle(&grid, &fan.starts(&geometry), &TraceOptions::default(), exec)?;
    for (label, n) in &bundle.counts {
        out.put(&format!("fan_{label}"), *n as f64);
    }
    out.put("fan_total", bundle.total as f64);
    out.put("fan_max_energy_error", bundle.max_energy_error);
    out.write("bundle.json", |w| Ok(serde_json::to_writer_pretty(w, &bundle)?))?;
    Ok(())
}

fn beam_stage(cfg: &Config, v: &ElectrodeVoltages, rec: &mut StepRecord) -> StepResult<BeamParams> {
    let beam = BeamParams::for_voltages(&cfg.beam, v)?;
    let q = &mut rec.quantities;
    q.insert("drive_V".into(), cfg.emission.drive_voltage(v));
    q.insert("rate_Hz".into(), cfg.emission.rate_for(v)?);
    q.insert("wavelength_m".into(), beam.wavelength);
    q.insert("theta_rad".into(), beam.theta);
    q.insert("s0_m".into(), beam.s0);
    q.insert("magnification".into(), beam.magnification);
    q.insert("s_m".into(), beam.s);
    let model = planted_pattern(cfg, &beam);
    q.insert(
        "fringe_count".into(),
        count_fringes(&model, cfg.events.count_threshold)? as f64,
    );
    Ok(beam)
}

/// Interference pattern the detector sees for this beam.
pub fn planted_pattern(cfg: &Config, beam: &BeamParams) -> FringeModel {
    FringeModel {
        i0: 1.0,
        contrast: cfg.events.contrast,
        s: beam.s,
        phi0: 0.3,
        s1: cfg.events.envelope_periods * beam.s,
        phi1: 0.0,
    }
}

/// Metadata stored next to an event CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMeta {
    pub schema_version: u32,
    pub duration_s: f64,
    pub detector: Detector,
    pub seed: u64,
    pub planted: FringeModel,
    pub dephasing: DephasingModel,
}

/// Histogram fit and correlation analysis of one event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnalysis {
    pub schema_version: u32,
    pub events: usize,
    pub histogram: FringeFit,
    /// Correlation result, or why it could not be obtained.
    pub g2: std::result::Result<G2Result, ErrorRecord>,
}

impl EventAnalysis {
    pub fn contrast_raw(&self) -> f64 {
        self.histogram.model.contrast
    }
}

/// Fit the time-integrated histogram, then run the correlation analysis
/// with the fitted fringe spacing.
pub fn analyze_events(events: &EventList, bins: usize, opts: &G2Options) -> Result<EventAnalysis> {
    let histogram = histogram_contrast(events, bins)?;
    let g2 = g2_contrast(events, histogram.model.s, &default_frequency_grid(), opts).map_err(|e| ErrorRecord::from(&e));
    Ok(EventAnalysis {
        schema_version: crate::SCHEMA_VERSION,
        events: events.len(),
        histogram,
        g2,
    })
}

fn events_stage(cfg: &Config, beam: &BeamParams, out: &mut Artifacts) -> StepResult {
    let model = planted_pattern(cfg, beam);
    let detector = Detector::main_lobe(&model, cfg.events.detector_half_height);
    let duration = cfg.events.count / cfg.events.rate;
    let generated = generate_events(
        &model,
        &cfg.dephasing,
        cfg.events.rate,
        duration,
        &detector,
        out.rec.seed,
    )?;
    let meta = EventMeta {
        schema_version: crate::SCHEMA_VERSION,
        duration_s: duration,
        detector,
        seed: out.rec.seed,
        planted: model,
        dephasing: cfg.dephasing,
    };
    // analyse exactly what a reader of the CSV gets back
    let mut csv = Vec::new();
    generated.write_csv(&mut csv)?;
    let events = EventList {
        seed: meta.seed,
        ..EventList::read_csv(csv.as_slice(), Some(duration), Some(detector))?
    };
    out.write("events.csv", |w| Ok(w.write_all(&csv)?))?;
    out.write("events.json", |w| Ok(serde_json::to_writer_pretty(w, &meta)?))?;

    let analysis = analyze_events(&events, cfg.events.bins, &G2Options::default())?;
    out.put("events", events.len() as f64);
    out.put("contrast_raw", analysis.histogram.model.contrast);
    out.put("contrast_raw_error", analysis.histogram.contrast_error());
    out.put("s_fit_m", analysis.histogram.model.s);
    out.put("s1_fit_m", analysis.histogram.model.s1);
    out.put(
        "fringe_count_fit",
        count_fringes(&analysis.histogram.model, cfg.events.count_threshold)? as f64,
    );
    out.write("events_analysis.json", |w| {
        Ok(serde_json::to_writer_pretty(w, &analysis)?)
    })?;
    let g2 = analysis.g2?;
    out.put("contrast_corrected", g2.contrast);
    out.put("contrast_corrected_error", g2.contrast_error);
    out.put("dephasing_amplitude_rad", g2.amplitude);
    out.put("dephasing_amplitude_error_rad", g2.amplitude_error);
    out.put("dephasing_frequency_Hz", g2.frequency);
    out.put("g2_reduced_chi2", g2.reduced_chi2);
    out.put("g2_low_statistics", if g2.low_statistics { 1.0 } else { 0.0 });
    Ok(())
}

fn wien_stage(cfg: &Config, beam: &BeamParams, out: &mut Artifacts) -> StepResult {
    let w = &cfg.wien;
    let mut rng = ChaCha8Rng::seed_from_u64(out.rec.seed);
    let generated = synthetic_sweep(
        beam,
        &w.filter,
        w.planted_l_c,
        w.planted_c0,
        w.planted_center,
        w.contrast_noise,
        &mut rng,
    )?;
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &generated)?;
    let pts = read_sweep_csv(csv.as_slice())?;
    out.write("wien_sweep.csv", |wr| Ok(wr.write_all(&csv)?))?;
    let r = analyze_wien_sweep(&pts, beam, &w.filter)?;
    out.put("wien_c0", r.c0);
    out.put("wien_center_V", r.center);
    out.put("wien_sigma_V", r.sigma);
    out.put("u_cl_V", r.u_cl);
    out.put("l_c_m", r.l_c);
    out.put("l_c_error_m", r.l_c_error);
    out.put("delta_e_eV", r.delta_e);
    out.put("delta_e_error_eV", r.delta_e_error);
    out.put("wien_extrapolated", if r.extrapolated { 1.0 } else { 0.0 });
    out.write("coherence.json", |wr| Ok(serde_json::to_writer_pretty(wr, &r)?))?;
    Ok(())
}

fn summarize(report: &RunReport) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    let span = |xs: &[f64]| {
        xs.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let rates = report.series("rate_Hz");
    if rates.len() >= 2 {
        s.insert("rate_ratio".into(), rates[rates.len() - 1] / rates[0]);
    }
    for key in [
        "s_m",
        "fringe_count",
        "fringe_count_fit",
        "contrast_corrected",
        "terminal_energy_eV",
        "l_c_m",
    ] {
        let xs = report.series(key);
        if !xs.is_empty() {
            let (lo, hi) = span(&xs);
            s.insert(format!("{key}_min"), lo);
            s.insert(format!("{key}_max"), hi);
        }
    }
    // largest pairwise disagreement of coherence lengths in combined errors
    let lc: Vec<(f64, f64)> = report
        .steps
        .iter()
        .filter_map(|st| Some((*st.quantities.get("l_c_m")?, *st.quantities.get("l_c_error_m")?)))
        .collect();
    if lc.len() >= 2 {
        let mut worst: f64 = 0.0;
        for (i, a) in lc.iter().enumerate() {
            for b in &lc[i + 1..] {
                worst = worst.max((a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt());
            }
        }
        s.insert("l_c_max_pull".into(), worst);
    }
    s
}
