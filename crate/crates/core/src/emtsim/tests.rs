use super::network::GROUND;
use super::*;
use crate::casefile::BusId;
use crate::cases;

fn no_fault(dt: f64, duration: f64) -> SimConfig {
    SimConfig { dt, duration, f0: 60.0, fault: None }
}

/// RC step energization: source -> 1 ohm -> 1 mF. The trapezoidal companion
/// applies the step at the midpoint of the first interval, so the analytic
/// oracle is evaluated at t + dt/2.
fn rc_max_error(dt: f64) -> f64 {
    let tau = 1e-3;
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    let n2 = net.add_node(BusId(2));
    net.add_step_source("src", n1, 1.0, 0.0);
    net.add_resistor(Some("r"), Some(n1), Some(n2), 1.0);
    net.add_capacitor(Some("c"), Some(n2), GROUND, 1e-3);
    let mut solver = Solver::new(net, no_fault(dt, 5.0 * tau)).unwrap();
    let trace = solver.run(vec![], &[Tap::NodeVoltage(BusId(2))]).unwrap();
    let vc = trace.channel("v:2").unwrap();
    let mut worst = 0.0_f64;
    for (k, v) in vc.iter().enumerate() {
        let t = trace.time(k) + dt / 2.0;
        let expect = 1.0 - (-t / tau).exp();
        worst = worst.max((v - expect).abs());
    }
    worst
}

#[test]
fn rc_step_matches_analytic() {
    let dt = 1e-5;
    let err = rc_max_error(dt);
    assert!(err < 1e-3, "max error {err}");
    // specifically at t = RC
    let tau = 1e-3;
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    let n2 = net.add_node(BusId(2));
    net.add_step_source("src", n1, 1.0, 0.0);
    net.add_resistor(Some("r"), Some(n1), Some(n2), 1.0);
    net.add_capacitor(Some("c"), Some(n2), GROUND, 1e-3);
    let mut solver = Solver::new(net, no_fault(dt, 2.0 * tau)).unwrap();
    let trace = solver.run(vec![], &[Tap::NodeVoltage(BusId(2))]).unwrap();
    let k = (tau / dt).round() as usize;
    let v = trace.channel("v:2").unwrap()[k];
    let expect = 1.0 - (-(trace.time(k) + dt / 2.0) / tau).exp();
    assert!((v - expect).abs() / expect < 1e-3, "v={v} expect={expect}");
}

#[test]
fn halving_dt_is_second_order() {
    let e1 = rc_max_error(2e-5);
    let e2 = rc_max_error(1e-5);
    let ratio = e1 / e2;
    assert!(
        (3.0..5.0).contains(&ratio),
        "expected ~4x error reduction, got {ratio} ({e1} -> {e2})"
    );
}

#[test]
fn rl_sinusoid_matches_phasor() {
    // R = 1, omega L = 1 at 60 Hz: steady current 1/sqrt(2) at -45 deg
    let f0 = 60.0;
    let omega = 2.0 * std::f64::consts::PI * f0;
    let dt = 1.0 / (f0 * 256.0);
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    net.add_voltage_source("src", n1, Some((1.0, 0.0, omega)));
    net.add_series_rl(Some("rl"), Some(n1), GROUND, 1.0, 1.0 / omega);
    let mut solver = Solver::new(net, no_fault(dt, 7.0 / f0)).unwrap();
    let trace = solver
        .run(vec![], &[Tap::ElementCurrent("rl".into())])
        .unwrap();
    let i = trace.channel("i:rl").unwrap();
    // correlate over the last full cycle
    let nw = 256;
    let start = i.len() - nw;
    let (mut c, mut s) = (0.0, 0.0);
    for k in 0..nw {
        let t = trace.time(start + k);
        c += i[start + k] * (omega * t).cos();
        s += i[start + k] * (omega * t).sin();
    }
    let re = 2.0 * c / nw as f64;
    let im = -2.0 * s / nw as f64;
    let mag = (re * re + im * im).sqrt();
    let phase = im.atan2(re);
    let expect = 1.0 / 2.0_f64.sqrt();
    assert!((mag - expect).abs() / expect < 1e-3, "mag {mag}");
    assert!(
        (phase + std::f64::consts::FRAC_PI_4).abs() < 1e-3,
        "phase {phase}"
    );
}

#[test]
fn lossless_lc_energy_is_conserved() {
    let l = 10e-3;
    let c = 10e-6;
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    net.add_capacitor(Some("c"), Some(n1), GROUND, c);
    net.add_series_rl(Some("l"), Some(n1), GROUND, 0.0, l);
    net.set_element_state("c", 1.0, 0.0);
    net.set_element_state("l", 1.0, 0.0);
    let mut solver = Solver::new(net, no_fault(1e-6, 1.0)).unwrap();
    let trace = solver
        .run(
            vec![],
            &[Tap::NodeVoltage(BusId(1)), Tap::ElementCurrent("l".into())],
        )
        .unwrap();
    let v = trace.channel("v:1").unwrap();
    let i = trace.channel("i:l").unwrap();
    let e0 = 0.5 * c * 1.0;
    // skip the first samples where the connection transient of the initial
    // condition settles the energy bookkeeping
    let mut emin = f64::INFINITY;
    let mut emax = 0.0_f64;
    for k in 2..v.len() {
        let e = 0.5 * c * v[k] * v[k] + 0.5 * l * i[k] * i[k];
        emin = emin.min(e);
        emax = emax.max(e);
    }
    assert!((emax - emin) / e0 < 1e-3, "energy band {emin}..{emax} vs {e0}");
}

#[test]
fn deterministic_traces() {
    let run_once = || {
        let f0 = 60.0;
        let omega = 2.0 * std::f64::consts::PI * f0;
        let mut net = Network::new();
        let n1 = net.add_node(BusId(1));
        net.add_voltage_source("src", n1, Some((1.0, 0.3, omega)));
        net.add_series_rl(Some("rl"), Some(n1), GROUND, 0.5, 2e-3);
        let mut solver = Solver::new(net, no_fault(5e-5, 0.2)).unwrap();
        solver
            .run(vec![], &[Tap::ElementCurrent("rl".into())])
            .unwrap()
    };
    let a = run_once();
    let b = run_once();
    assert_eq!(a.channel("i:rl").unwrap(), b.channel("i:rl").unwrap());
}

#[test]
fn hook_sees_only_past_voltage() {
    // a hook that records what it is given; at step k it must see v(k-1)
    use std::cell::RefCell;
    use std::rc::Rc;
    let seen = Rc::new(RefCell::new(Vec::new()));
    let seen2 = seen.clone();
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    net.add_step_source("src", n1, 1.0, 0.0);
    net.add_resistor(Some("r"), Some(n1), GROUND, 1.0);
    let hook = InjectionHook::new(BusId(1), move |_, _, v_prev| {
        seen2.borrow_mut().push(v_prev);
        0.0
    });
    let mut solver = Solver::new(net, no_fault(1e-5, 1e-4)).unwrap();
    let trace = solver.run(vec![hook], &[Tap::NodeVoltage(BusId(1))]).unwrap();
    let v = trace.channel("v:1").unwrap();
    let seen = seen.borrow();
    assert_eq!(seen[0], 0.0);
    for k in 1..v.len() {
        assert_eq!(seen[k], v[k - 1]);
    }
}

#[test]
fn fault_matrix_restores_bit_identical() {
    let mut net = Network::new();
    let n1 = net.add_node(BusId(1));
    net.add_step_source("src", n1, 1.0, 0.0);
    net.add_resistor(Some("r"), Some(n1), GROUND, 2.0);
    let cfg = SimConfig {
        dt: 5e-5,
        duration: 0.1,
        f0: 60.0,
        fault: Some(FaultSpec { bus: BusId(1), t_on: 0.02, t_off: 0.04, conductance: 1e4 }),
    };
    let mut solver = Solver::new(net, cfg).unwrap();
    let before = solver.active_conductance_matrix();
    solver.apply_fault(true).unwrap();
    assert_ne!(solver.active_conductance_matrix(), before);
    solver.apply_fault(false).unwrap();
    assert_eq!(solver.active_conductance_matrix(), before);
}

#[test]
fn fault_on_isolated_node_holds_zero() {
    let mut net = Network::new();
    net.add_node(BusId(1));
    let cfg = SimConfig {
        dt: 5e-5,
        duration: 0.01,
        f0: 60.0,
        fault: Some(FaultSpec { bus: BusId(1), t_on: 0.0, t_off: 0.01, conductance: 100.0 }),
    };
    let mut solver = Solver::new(net, cfg).unwrap();
    let trace = solver.run(vec![], &[Tap::NodeVoltage(BusId(1))]).unwrap();
    assert!(trace.channel("v:1").unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn truly_isolated_node_is_rejected() {
    let mut net = Network::new();
    net.add_node(BusId(1));
    assert!(matches!(
        Solver::new(net, no_fault(5e-5, 0.01)),
        Err(crate::Error::IsolatedNode(BusId(1)))
    ));
}

#[test]
fn rejects_oversized_step() {
    let net = Network::new();
    assert!(Solver::new(net, no_fault(1e-3, 0.1)).is_err());
}

// -------- case-driven tests --------

#[test]
fn operating_point_check_accepts_shipped_case() {
    let case = cases::kundur_two_area();
    check_operating_point(&case, 1e-6).unwrap();
}

#[test]
fn operating_point_check_rejects_perturbed_case() {
    let mut case = cases::kundur_two_area();
    case.buses[6].voltage_pu += 0.05;
    assert!(matches!(
        check_operating_point(&case, 1e-6),
        Err(crate::Error::OperatingPointMismatch { .. })
    ));
}

#[test]
fn machine_emf_from_terminal_conditions() {
    // single machine: E' = V + jX'd conj(S/V); with V = 1, S = 0.9 + j0.3,
    // X'd = 0.3 the EMF is 1.09 + j0.27
    let case = crate::CaseFile::from_str(
        r#"
        name = "one-machine"
        base_mva = 100.0
        base_frequency_hz = 60.0
        [[buses]]
        id = 1
        voltage_pu = 1.0
        angle_rad = 0.0
        [[buses]]
        id = 2
        voltage_pu = 1.0
        angle_rad = 0.0
        [[branches]]
        from = 1
        to = 2
        r_pu = 0.01
        x_pu = 0.1
        [[generators]]
        bus = 1
        mva = 100.0
        inertia_s = 5.0
        xd_prime_pu = 0.3
        p_pu = 0.9
        q_pu = 0.3
        [partition]
        study = [1]
        external = []
        boundary = 2
        external_generators = []
        "#,
    )
    .unwrap();
    let opts = AssembleOptions { machines: MachineMode::Dynamic, ..Default::default() };
    let net = build_network(&case, &opts).unwrap();
    // reconstruct the expected EMF
    let e = num_complex::Complex64::new(1.09, 0.27);
    // the angle tap at t ~ 0 must sit at arg(e) and the machine must hold
    // its equilibrium over a short run
    let cfg = no_fault(5e-5, 0.05);
    let mut solver = Solver::new(net, cfg).unwrap();
    solver.init_steady_sinusoid(case.omega0()).unwrap();
    let trace = solver
        .run(vec![], &[Tap::MachineAngle("G1".into()), Tap::MachineSpeed("G1".into())])
        .unwrap();
    let delta = trace.channel("delta:G1").unwrap();
    let speed = trace.channel("speed:G1").unwrap();
    assert!((delta[0] - e.arg()).abs() < 1e-3, "delta {}", delta[0]);
    assert!(speed.iter().all(|w| w.abs() < 1e-4));
}

#[test]
fn zero_load_case_holds_flat_voltage() {
    let case = crate::CaseFile::from_str(
        r#"
        name = "flat"
        base_mva = 100.0
        base_frequency_hz = 60.0
        [[buses]]
        id = 1
        voltage_pu = 1.0
        angle_rad = 0.0
        [[buses]]
        id = 2
        voltage_pu = 1.0
        angle_rad = 0.0
        [[branches]]
        from = 1
        to = 2
        r_pu = 0.01
        x_pu = 0.1
        [[generators]]
        bus = 1
        mva = 100.0
        inertia_s = 5.0
        xd_prime_pu = 0.3
        p_pu = 0.0
        q_pu = 0.0
        [partition]
        study = [1]
        external = []
        boundary = 2
        external_generators = []
        "#,
    )
    .unwrap();
    let cfg = no_fault(5e-5, 0.1);
    let opts = AssembleOptions { machines: MachineMode::Dynamic, ..Default::default() };
    let mut solver = steady_state_init(&case, &opts, cfg).unwrap();
    let trace = solver
        .run(vec![], &[Tap::NodeVoltage(BusId(2)), Tap::MachineAngle("G1".into())])
        .unwrap();
    let delta = trace.channel("delta:G1").unwrap();
    assert!(delta.iter().all(|d| d.abs() < 1e-6), "delta drifted");
    // peak of the flat sinusoid stays at 1 pu
    let v = trace.channel("v:2").unwrap();
    let peak = v.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    assert!((peak - 1.0).abs() < 1e-3, "peak {peak}");
}

#[test]
fn two_area_settles_without_fault() {
    let case = cases::kundur_two_area();
    let cfg = no_fault(5e-5, 0.5);
    let opts = AssembleOptions {
        machines: MachineMode::Dynamic,
        include_constant_current_loads: true,
        ..Default::default()
    };
    let mut solver = steady_state_init(&case, &opts, cfg).unwrap();
    let taps: Vec<Tap> = [1, 2, 3, 4]
        .iter()
        .map(|b| Tap::MachineSpeed(format!("G{b}")))
        .collect();
    let trace = solver.run(vec![], &taps).unwrap();
    for b in [1, 2, 3, 4] {
        let w = trace.channel(&format!("speed:G{b}")).unwrap();
        let worst = w.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        assert!(worst < 1e-4, "G{b} speed deviation {worst}");
    }
}

#[test]
fn two_area_fault_response_signatures() {
    let case = cases::kundur_two_area();
    let cfg = SimConfig {
        dt: 5e-5,
        duration: 3.0,
        f0: 60.0,
        fault: Some(FaultSpec { bus: BusId(8), t_on: 0.1, t_off: 0.2, conductance: 1e4 }),
    };
    let trace = run_case(
        &case,
        &cfg,
        vec![],
        &[
            Tap::NodeVoltage(BusId(8)),
            Tap::MachineSpeed("G1".into()),
            Tap::MachineSpeed("G2".into()),
        ],
    )
    .unwrap();
    let v8 = trace.channel("v:8").unwrap();
    let dt = cfg.dt;
    let peak_in = |a: f64, b: f64| {
        let (ka, kb) = ((a / dt) as usize, (b / dt) as usize);
        v8[ka..kb].iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    };
    // voltage collapses during the fault and recovers after
    assert!(peak_in(0.12, 0.19) < 0.1, "fault-bus voltage did not collapse");
    assert!(peak_in(0.0, 0.09) > 0.9);
    assert!(peak_in(2.5, 3.0) > 0.7, "voltage did not recover");

    // post-fault electromechanical swing in the 0.3 - 1.5 Hz band:
    // zero-crossing count of the G1 speed deviation about its mean
    let w1 = trace.channel("speed:G1").unwrap();
    let k0 = (0.3 / dt) as usize;
    let tail = &w1[k0..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let mut crossings = 0;
    for k in 1..tail.len() {
        if (tail[k - 1] - mean).signum() != (tail[k] - mean).signum() {
            crossings += 1;
        }
    }
    let span = tail.len() as f64 * dt;
    let freq = crossings as f64 / 2.0 / span;
    assert!(
        (0.3..1.5).contains(&freq),
        "swing frequency {freq} Hz outside the electromechanical band"
    );
}
