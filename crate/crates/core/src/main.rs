use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use satbeam::config::{load_config, validate_config, Config};
use satbeam::correlation::G2Options;
use satbeam::emission::{calibrate_fn, fn_plot, read_calibration_csv, write_fn_plot_csv};
use satbeam::events::{generate_events, Detector, EventList};
use satbeam::geometry::{build_geometry, default_tolerance, solve_laplace_with, ElectrodeVoltages};
use satbeam::optics::{count_fringes, fit_fringes, BeamParams, Histogram};
use satbeam::scenario::{
    analyze_events, find_scenario, list_scenarios, planted_pattern, run_scenario, EventMeta, RunOptions,
};
use satbeam::trajectory::{
    apex_start, classify_bundle, integrate_trajectory, terminal_energy, LaunchFan, TraceOptions,
};
use satbeam::wien::{analyze_wien_sweep, read_sweep_csv, synthetic_sweep, write_sweep_csv};
use satbeam::{Error, Exec, Result, SCHEMA_VERSION};

#[derive(Parser)]
#[command(author, version, about)]
struct Cli {
    /// TOML file overlaid on the defaults (or on the scenario's config)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Stop a scenario at the first failing step
    #[arg(long, global = true)]
    fail_fast: bool,
    #[command(subcommand)]
    command: Command,
}

/// Override the configured electrode voltages.
#[derive(Args, Clone, Copy)]
struct Voltages {
    #[arg(long, allow_hyphen_values = true)]
    u_sat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u_c: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the electrostatic field; writes potential.csv and solve.json
    Solve {
        #[command(flatten)]
        v: Voltages,
    },
    /// Trace an electron from the apex and a launch fan
    Trace {
        #[command(flatten)]
        v: Voltages,
    },
    /// Emission rate and Fowler-Nordheim plot, optionally calibrated
    Emit {
        #[command(flatten)]
        v: Voltages,
        /// CSV with columns phi_V,rate_Hz
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Fit a fringe histogram, or print the predicted beam parameters
    Fringes {
        #[command(flatten)]
        v: Voltages,
        /// CSV with columns bin_center_m,counts
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Coherence length from a Wien-filter sweep (synthetic if none given)
    Wien {
        #[command(flatten)]
        v: Voltages,
        /// CSV with columns u_wf_V,contrast,sigma_contrast
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Generate synthetic detector events
    Events {
        #[command(flatten)]
        v: Voltages,
    },
    /// Histogram and correlation analysis of an event file
    G2 {
        /// CSV with columns t_ns,x_mm,y_mm
        events: PathBuf,
        /// events.json written next to the events; supplies duration and detector
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Built-in end-to-end scenarios
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Check a config file and list every violation
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum ScenarioAction {
    Run { name: String },
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Scenario { action } => scenario(cli, action),
        Command::Validate { path } => {
            let report = validate_config(path)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.is_valid() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        cmd => {
            let cfg = base_config(cli, &Config::default())?;
            std::fs::create_dir_all(&cli.out)?;
            match cmd {
                Command::Solve { v } => solve(cli, &cfg, &voltages(&cfg, v)),
                Command::Trace { v } => trace(cli, &cfg, &voltages(&cfg, v)),
                Command::Emit { v, calibration } => emit(cli, &cfg, &voltages(&cfg, v), calibration.as_deref()),
                Command::Fringes { v, histogram } => fringes(cli, &cfg, &voltages(&cfg, v), histogram.as_deref()),
                Command::Wien { v, sweep } => wien(cli, &cfg, &voltages(&cfg, v), sweep.as_deref()),
                Command::Events { v } => events(cli, &cfg, &voltages(&cfg, v)),
                Command::G2 { events, meta } => g2(cli, &cfg, events, meta.as_deref()),
                Command::Scenario { .. } | Command::Validate { .. } => unreachable!(),
            }?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn base_config(cli: &Cli, base: &Config) -> Result<Config> {
    match &cli.config {
        Some(p) => load_config(p, base),
        None => Ok(base.clone()),
    }
}

fn voltages(cfg: &Config, v: &Voltages) -> ElectrodeVoltages {
    ElectrodeVoltages::new(v.u_sat.unwrap_or(cfg.voltages.u_sat), v.u_c.unwrap_or(cfg.voltages.u_c))
}

fn create(cli: &Cli, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(cli.out.join(name))?))
}

fn write_json<T: Serialize>(cli: &Cli, name: &str, value: &T) -> Result<()> {
    let mut w = create(cli, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    println!("wrote {}", cli.out.join(name).display());
    Ok(())
}

fn write_with(cli: &Cli, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(cli, name)?;
    f(&mut w)?;
    w.flush()?;
    println!("wrote {}", cli.out.join(name).display());
    Ok(())
}

fn solve(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages) -> Result<()> {
    let geometry = build_geometry(&cfg.geometry)?;
    let grid = solve_laplace_with(
        &geometry,
        v,
        default_tolerance(v),
        cfg.trace.solve_max_iterations,
        Exec::default(),
    )?;
    write_with(cli, "potential.csv", |w| grid.write_csv(w))?;
    write_json(cli, "solve.json", &grid.summary())
}

#[derive(Serialize)]
struct TraceReport {
    schema_version: u32,
    u_sat_v: f64,
    u_c_v: f64,
    apex_termination: String,
    terminal_energy_ev: f64,
    max_energy_error: f64,
    flight_time_s: f64,
}

fn trace(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages) -> Result<()> {
    let geometry = build_geometry(&cfg.geometry)?;
    let grid = solve_laplace_with(
        &geometry,
        v,
        default_tolerance(v),
        cfg.trace.solve_max_iterations,
        Exec::default(),
    )?;
    let traj = integrate_trajectory(&grid, apex_start(&geometry), &TraceOptions::default())?;
    write_with(cli, "trajectory.csv", |w| traj.write_csv(w))?;
    let report = TraceReport {
        schema_version: SCHEMA_VERSION,
        u_sat_v: v.u_sat,
        u_c_v: v.u_c,
        apex_termination: traj.termination.label(&grid),
        terminal_energy_ev: terminal_energy(&traj)?,
        max_energy_error: traj.max_energy_error,
        flight_time_s: traj.last().t,
    };
    println!(
        "terminal energy {:.4} eV ({})",
        report.terminal_energy_ev, report.apex_termination
    );
    write_json(cli, "trace.json", &report)?;

    let fan = LaunchFan {
        count: cfg.trace.fan_count,
        half_angle: cfg.trace.fan_half_angle,
        launch_radius: cfg.trace.launch_radius_cells * geometry.grid.h,
        ke_ev: cfg.trace.launch_ke_ev,
    };
    let bundle = classify_bundle(&grid, &fan.starts(&geometry), &TraceOptions::default(), Exec::default())?;
    for (label, n) in &bundle.counts {
        println!("fan {label}: {n}");
    }
    write_json(cli, "bundle.json", &bundle)
}

#[derive(Serialize)]
struct EmitReport {
    schema_version: u32,
    params: satbeam::emission::FNParams,
    calibration: Option<satbeam::emission::Calibration>,
    drive_v: f64,
    rate_hz: f64,
}

fn emit(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages, calibration: Option<&Path>) -> Result<()> {
    let calibration = match calibration {
        Some(p) => {
            let pts = read_calibration_csv(BufReader::new(File::open(p)?))?;
            Some(calibrate_fn(&pts, cfg.emission.drive)?)
        }
        None => None,
    };
    let params = calibration.map_or(cfg.emission, |c| c.params);
    let drive = params.drive_voltage(v);
    let rate = params.rate_for(v)?;
    println!("drive {drive:.1} V, rate {rate:.4e} Hz");
    let plot = fn_plot(&params, (0.8 * drive, 1.2 * drive), 50)?;
    write_with(cli, "fn_plot.csv", |w| write_fn_plot_csv(w, &plot))?;
    write_json(
        cli,
        "emit.json",
        &EmitReport {
            schema_version: SCHEMA_VERSION,
            params,
            calibration,
            drive_v: drive,
            rate_hz: rate,
        },
    )
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    #[serde(flatten)]
    fit: satbeam::optics::FringeFit,
}

#[derive(Serialize)]
struct BeamReport {
    schema_version: u32,
    beam: BeamParams,
    fringe_count: u32,
}

fn fringes(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages, histogram: Option<&Path>) -> Result<()> {
    match histogram {
        Some(p) => {
            let h = Histogram::read_csv(BufReader::new(File::open(p)?))?;
            let fit = fit_fringes(&h)?;
            println!(
                "contrast {:.4} ± {:.4}, spacing {:.4e} m",
                fit.model.contrast,
                fit.contrast_error(),
                fit.model.s
            );
            write_json(
                cli,
                "fringes.json",
                &FitReport {
                    schema_version: SCHEMA_VERSION,
                    fit,
                },
            )
        }
        None => {
            let beam = BeamParams::for_voltages(&cfg.beam, v)?;
            let fringe_count = count_fringes(&planted_pattern(cfg, &beam), cfg.events.count_threshold)?;
            println!(
                "wavelength {:.3} pm, s0 {:.1} nm, s {:.4} mm, {} fringes",
                beam.wavelength * 1e12,
                beam.s0 * 1e9,
                beam.s * 1e3,
                fringe_count
            );
            write_json(
                cli,
                "beam.json",
                &BeamReport {
                    schema_version: SCHEMA_VERSION,
                    beam,
                    fringe_count,
                },
            )
        }
    }
}

fn wien(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages, sweep: Option<&Path>) -> Result<()> {
    let beam = BeamParams::for_voltages(&cfg.beam, v)?;
    let w = &cfg.wien;
    let pts = match sweep {
        Some(p) => read_sweep_csv(BufReader::new(File::open(p)?))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let pts = synthetic_sweep(
                &beam,
                &w.filter,
                w.planted_l_c,
                w.planted_c0,
                w.planted_center,
                w.contrast_noise,
                &mut rng,
            )?;
            write_with(cli, "wien_sweep.csv", |wr| write_sweep_csv(wr, &pts))?;
            pts
        }
    };
    let r = analyze_wien_sweep(&pts, &beam, &w.filter)?;
    println!(
        "l_c {:.2} ± {:.2} nm, delta E {:.3} ± {:.3} eV",
        r.l_c * 1e9,
        r.l_c_error * 1e9,
        r.delta_e,
        r.delta_e_error
    );
    write_json(cli, "coherence.json", &r)
}

fn events(cli: &Cli, cfg: &Config, v: &ElectrodeVoltages) -> Result<()> {
    let beam = BeamParams::for_voltages(&cfg.beam, v)?;
    let model = planted_pattern(cfg, &beam);
    let detector = Detector::main_lobe(&model, cfg.events.detector_half_height);
    let duration = cfg.events.count / cfg.events.rate;
    let ev = generate_events(&model, &cfg.dephasing, cfg.events.rate, duration, &detector, cli.seed)?;
    println!("{} events over {duration:.1} s", ev.len());
    write_with(cli, "events.csv", |w| ev.write_csv(w))?;
    write_json(
        cli,
        "events.json",
        &EventMeta {
            schema_version: SCHEMA_VERSION,
            duration_s: duration,
            detector,
            seed: cli.seed,
            planted: model,
            dephasing: cfg.dephasing,
        },
    )
}

fn g2(cli: &Cli, cfg: &Config, events: &Path, meta: Option<&Path>) -> Result<()> {
    let meta: Option<EventMeta> = match meta {
        Some(p) => Some(serde_json::from_reader(BufReader::new(File::open(p)?))?),
        None => None,
    };
    let ev = EventList::read_csv(
        BufReader::new(File::open(events)?),
        meta.map(|m| m.duration_s),
        meta.map(|m| m.detector),
    )?;
    let analysis = analyze_events(&ev, cfg.events.bins, &G2Options::default())?;
    println!(
        "raw contrast {:.4} ± {:.4}",
        analysis.contrast_raw(),
        analysis.histogram.contrast_error()
    );
    match &analysis.g2 {
        Ok(g) => println!(
            "corrected contrast {:.4} ± {:.4}, amplitude {:.3} ± {:.3} rad at {} Hz{}",
            g.contrast,
            g.contrast_error,
            g.amplitude,
            g.amplitude_error,
            g.frequency,
            if g.low_statistics { " (low statistics)" } else { "" }
        ),
        Err(e) => println!("correlation analysis failed: {}", e.message),
    }
    write_json(cli, "g2.json", &analysis)
}

fn scenario(cli: &Cli, action: &ScenarioAction) -> Result<ExitCode> {
    match action {
        ScenarioAction::List => {
            for s in list_scenarios() {
                println!("{:<20} {}", s.name, s.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        ScenarioAction::Run { name } => {
            let mut s = find_scenario(name)?;
            s.config = base_config(cli, &s.config)?;
            let opts = RunOptions {
                seed: cli.seed,
                out: Some(cli.out.clone()),
                fail_fast: cli.fail_fast,
                exec: Exec::default(),
            };
            let report = run_scenario(&s, &opts)?;
            for step in &report.steps {
                match &step.error {
                    None => println!(
                        "step {} (U_SAT {} V, U_c {} V): ok",
                        step.index, step.u_sat_v, step.u_c_v
                    ),
                    Some(e) => println!(
                        "step {} (U_SAT {} V, U_c {} V): {} error: {}",
                        step.index, step.u_sat_v, step.u_c_v, e.kind, e.message
                    ),
                }
            }
            if report.skipped_steps > 0 {
                println!("{} steps skipped", report.skipped_steps);
            }
            for (k, v) in &report.summary {
                println!("{k} = {v}");
            }
            println!("wrote {}", cli.out.join(&s.name).join("report.json").display());
            Ok(if report.succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}
