use satbeam::exec::Exec;
use satbeam::field::PotentialGrid;
use satbeam::geometry::{
    build_geometry, default_tolerance, solve_laplace, ElectrodeVoltages, Geometry, GeometryConfig,
};
use satbeam::trajectory::{
    apex_start, classify_bundle, integrate_trajectory, terminal_energy, LaunchFan, ParticleState, Termination,
    TraceOptions,
};

fn setup(u_sat: f64, u_c: f64) -> (Geometry, PotentialGrid) {
    let g = build_geometry(&GeometryConfig::default()).unwrap();
    let v = ElectrodeVoltages::new(u_sat, u_c);
    let sol = solve_laplace(&g, &v, default_tolerance(&v), 200_000).unwrap();
    (g, sol)
}

#[test]
fn terminal_energy_is_independent_of_counter_voltage() {
    for u_c in [0.0, 200.0, 700.0, 1378.0] {
        let (g, sol) = setup(-600.0, u_c);
        let t = integrate_trajectory(&sol, apex_start(&g), &TraceOptions::default()).unwrap();
        let ke = terminal_energy(&t).unwrap();
        assert!((ke - 600.0).abs() < 0.1, "U_c = {u_c}: {ke} eV");
    }
}

#[test]
fn energy_is_conserved_at_every_stored_state() {
    let (g, sol) = setup(-1600.0, 200.0);
    let fan = LaunchFan {
        count: 6,
        half_angle: 1.5,
        launch_radius: 2.0 * g.grid.h,
        ke_ev: 0.0,
    };
    for s in fan.starts(&g) {
        let t = integrate_trajectory(&sol, s, &TraceOptions::default()).unwrap();
        let worst = t.energy_errors().into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-6, "relative drift {worst:e}");
        assert!(t.states.windows(2).all(|w| w[1].t > w[0].t));
    }
}

#[test]
fn field_free_injection_keeps_its_energy() {
    let (g, sol) = setup(0.0, 0.0);
    let start = ParticleState::launched(g.config.tip_apex_x + 1e-5, 0.0, 0.0, 5.0);
    let t = integrate_trajectory(&sol, start, &TraceOptions::default()).unwrap();
    assert!((terminal_energy(&t).unwrap() - 5.0).abs() < 1e-6);
}

#[test]
fn on_axis_launches_all_transmit() {
    let (g, sol) = setup(-1600.0, 200.0);
    let starts: Vec<_> = [0.0, 0.5, 2.0, 10.0]
        .iter()
        .map(|&ke| ParticleState::launched(g.config.tip_apex_x + 1e-6, 0.0, 0.0, ke))
        .collect();
    let b = classify_bundle(&sol, &starts, &TraceOptions::default(), Exec::default()).unwrap();
    assert_eq!(b.count("transmitted"), starts.len());
}

#[test]
fn high_counter_voltage_bends_electrons_back() {
    let (g, sol) = setup(-600.0, 1378.0);
    let fan = LaunchFan {
        count: 16,
        half_angle: 2.5,
        launch_radius: 2.0 * g.grid.h,
        ke_ev: 0.0,
    };
    let b = classify_bundle(&sol, &fan.starts(&g), &TraceOptions::default(), Exec::default()).unwrap();
    assert!(b.count("hit:counter") >= 1, "{:?}", b.counts);
    let seq = classify_bundle(&sol, &fan.starts(&g), &TraceOptions::default(), Exec::Sequential).unwrap();
    assert_eq!(b.counts, seq.counts);
    assert_eq!(b.outcomes, seq.outcomes);
}

#[test]
fn axial_velocity_never_gains_radial_component() {
    let (g, sol) = setup(-1600.0, 200.0);
    let t = integrate_trajectory(&sol, apex_start(&g), &TraceOptions::default()).unwrap();
    assert_eq!(t.termination, Termination::Transmitted);
    assert!(t.states.iter().all(|s| s.r == 0.0 && s.vr == 0.0));
}

#[test]
fn reversed_trajectory_returns_to_start() {
    let (g, sol) = setup(-1600.0, 200.0);
    let start = ParticleState::launched(g.config.aperture1_x - 2e-4, 3e-4, 0.2, 50.0);
    let duration = 2e-10;
    let opts = TraceOptions {
        max_time: Some(duration),
        ..Default::default()
    };
    let fwd = integrate_trajectory(&sol, start, &opts).unwrap();
    assert_eq!(fwd.termination, Termination::TimeLimit);
    let end = *fwd.last();
    let back_start = ParticleState {
        t: 0.0,
        vx: -end.vx,
        vr: -end.vr,
        ..end
    };
    let back = integrate_trajectory(&sol, back_start, &opts).unwrap();
    let p = back.last();
    let scale = start.x.hypot(start.r);
    let err = (p.x - start.x).hypot(p.r - start.r) / scale;
    assert!(err < 1e-4, "relative error {err:e}");
    // the test should exercise real motion
    assert!((end.x - start.x).hypot(end.r - start.r) > 10.0 * g.grid.h);
}
