//! Case-driven network assembly and steady-state initialization.

use std::collections::HashSet;

use num_complex::Complex64;

use super::network::{Network, Solver, Tap, GROUND};
use super::{InjectionHook, SimConfig, SimTrace};
use crate::casefile::{BusId, CaseFile, LoadModel};
use crate::netmodel::{build_admittance, AdmittanceOptions, LoadTreatment};
use crate::{Error, Result};

/// How generators enter the assembled network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MachineMode {
    /// Classical machine: EMF behind X'd with swing dynamics.
    #[default]
    Dynamic,
    /// EMF short circuited: X'd becomes a plain inductor to ground (the
    /// probe-network condition).
    ShortedToGround,
    Omit,
}

#[derive(Debug, Clone, Default)]
pub struct AssembleOptions {
    /// Buses to include; `None` means the whole case. Only branches with both
    /// endpoints inside the subset are assembled.
    pub subset: Option<Vec<BusId>>,
    pub machines: MachineMode,
    /// Include constant-current loads as fixed sinusoidal injections
    /// (open circuited when false, the probe-network condition).
    pub include_constant_current_loads: bool,
    /// Leave out the branch-charging halves that land on this bus. Used
    /// when a port is probed for identification: a capacitor hanging
    /// directly on the port cannot be replayed through a delayed current
    /// hook, so it is carried as a physical element instead.
    pub skip_charging_at: Option<BusId>,
}

/// Build an instantaneous-domain network from a case.
pub fn build_network(case: &CaseFile, opts: &AssembleOptions) -> Result<Network> {
    let omega0 = case.omega0();
    let subset: Vec<BusId> = match &opts.subset {
        Some(s) => s.clone(),
        None => case.buses.iter().map(|b| b.id).collect(),
    };
    for id in &subset {
        case.bus(*id)?;
    }
    let in_subset: HashSet<BusId> = subset.iter().copied().collect();

    let mut net = Network::new();
    for id in &subset {
        net.add_node(*id);
    }

    for (bi, br) in case.branches.iter().enumerate() {
        if !(in_subset.contains(&br.from) && in_subset.contains(&br.to)) {
            continue;
        }
        let a = Some(net.node_of(br.from)?);
        let b = Some(net.node_of(br.to)?);
        let name = format!("branch_{}_{}_{bi}", br.from, br.to);
        if br.x_pu > 0.0 {
            net.add_series_rl(Some(&name), a, b, br.r_pu, br.x_pu / omega0);
        } else if br.r_pu > 0.0 {
            net.add_resistor(Some(&name), a, b, br.r_pu);
        } else {
            return Err(Error::ZeroImpedanceBranch { from: br.from, to: br.to });
        }
        if br.b_pu > 0.0 {
            let c = br.b_pu / 2.0 / omega0;
            if opts.skip_charging_at != Some(br.from) {
                net.add_capacitor(Some(&format!("{name}_bf")), a, GROUND, c);
            }
            if opts.skip_charging_at != Some(br.to) {
                net.add_capacitor(Some(&format!("{name}_bt")), b, GROUND, c);
            }
        }
    }

    for (li, load) in case.loads.iter().enumerate() {
        if !in_subset.contains(&load.bus) {
            continue;
        }
        let node = Some(net.node_of(load.bus)?);
        let vm = case.bus(load.bus)?.voltage_pu;
        match load.model {
            LoadModel::ConstantImpedance => {
                // parallel G - L (or G - C) matching P + jQ at the
                // operating-point voltage
                if load.p_pu != 0.0 {
                    net.add_conductance(
                        Some(&format!("load_g_{}_{li}", load.bus)),
                        node,
                        GROUND,
                        load.p_pu / (vm * vm),
                    );
                }
                if load.q_pu > 0.0 {
                    let l = vm * vm / (load.q_pu * omega0);
                    net.add_series_rl(Some(&format!("load_l_{}_{li}", load.bus)), node, GROUND, 0.0, l);
                } else if load.q_pu < 0.0 {
                    let c = -load.q_pu / (vm * vm * omega0);
                    net.add_capacitor(Some(&format!("load_c_{}_{li}", load.bus)), node, GROUND, c);
                }
            }
            LoadModel::ConstantCurrent => {
                if opts.include_constant_current_loads {
                    let v = case.voltage_phasor(load.bus)?;
                    let s = Complex64::new(load.p_pu, load.q_pu);
                    let draw = (s / v).conj();
                    let node = node.unwrap();
                    net.add_phasor_injection(node, -draw, omega0);
                }
            }
        }
    }

    for gen in &case.generators {
        if !in_subset.contains(&gen.bus) {
            continue;
        }
        let node = net.node_of(gen.bus)?;
        let xd = gen.xd_prime_system(case.base_mva);
        match opts.machines {
            MachineMode::Dynamic => {
                let v = case.voltage_phasor(gen.bus)?;
                let s = Complex64::new(gen.p_pu, gen.q_pu);
                let i = (s / v).conj();
                let e = v + Complex64::new(0.0, xd) * i;
                let h_sys = gen.inertia_s * gen.mva / case.base_mva;
                let d_sys = gen.damping_pu * gen.mva / case.base_mva;
                net.add_machine(
                    &format!("G{}", gen.bus),
                    node,
                    e.norm(),
                    e.arg(),
                    gen.p_pu,
                    h_sys,
                    d_sys,
                    xd,
                    omega0,
                );
            }
            MachineMode::ShortedToGround => {
                net.add_series_rl(
                    Some(&format!("xd_{}", gen.bus)),
                    Some(node),
                    GROUND,
                    0.0,
                    xd / omega0,
                );
            }
            MachineMode::Omit => {}
        }
    }

    Ok(net)
}

/// Verify that the case operating point satisfies the network equations:
/// `Y(omega0) V` must reproduce the generator and constant-current-load
/// injections at every bus. The worst complex power mismatch above `tol`
/// (pu) is reported, not silently corrected.
pub fn check_operating_point(case: &CaseFile, tol: f64) -> Result<()> {
    let all: Vec<BusId> = case.buses.iter().map(|b| b.id).collect();
    let y = build_admittance(
        case,
        &all,
        case.omega0(),
        AdmittanceOptions { include_machine_reactance: false, loads: LoadTreatment::ConstantImpedance },
    )?;
    let v: Vec<Complex64> = all
        .iter()
        .map(|id| case.voltage_phasor(*id))
        .collect::<Result<_>>()?;
    let mut worst = (BusId(0), 0.0_f64);
    for (i, id) in all.iter().enumerate() {
        let mut inj = Complex64::ZERO;
        for (j, vj) in v.iter().enumerate() {
            inj += y.matrix()[(i, j)] * vj;
        }
        let s_net = v[i] * inj.conj();
        let mut s_expected = Complex64::ZERO;
        for g in case.generators_at(*id) {
            s_expected += Complex64::new(g.p_pu, g.q_pu);
        }
        for l in case.loads.iter().filter(|l| l.bus == *id) {
            if l.model == LoadModel::ConstantCurrent {
                s_expected -= Complex64::new(l.p_pu, l.q_pu);
            }
        }
        let mism = (s_net - s_expected).norm();
        if mism > worst.1 {
            worst = (*id, mism);
        }
    }
    if worst.1 > tol {
        return Err(Error::OperatingPointMismatch { bus: worst.0, mismatch: worst.1 });
    }
    Ok(())
}

/// Assemble a case (or a subset of it), validate the operating point, and
/// return a solver initialized to the sinusoidal steady state: machine
/// EMFs are placed from terminal V, P, Q through X'd and every companion
/// history starts on the steady sinusoid.
pub fn steady_state_init(
    case: &CaseFile,
    opts: &AssembleOptions,
    config: SimConfig,
) -> Result<Solver> {
    check_operating_point(case, 1e-6)?;
    let net = build_network(case, opts)?;
    let mut solver = Solver::new(net, config)?;
    solver.init_steady_sinusoid(case.omega0())?;
    Ok(solver)
}

/// Run the whole case through the EMT solver from its steady state.
pub fn run_case(
    case: &CaseFile,
    config: &SimConfig,
    hooks: Vec<InjectionHook>,
    taps: &[Tap],
) -> Result<SimTrace> {
    let opts = AssembleOptions {
        subset: None,
        machines: MachineMode::Dynamic,
        include_constant_current_loads: true,
        skip_charging_at: None,
    };
    let mut solver = steady_state_init(case, &opts, config.clone())?;
    solver.run(hooks, taps)
}
