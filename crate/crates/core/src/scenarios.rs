//! The reduction experiment: run one case in four model variants (full
//! network, wideband equivalent, phasor-swing equivalent, and both
//! combined), apply the same fault protocol to each, and compare the
//! boundary active-power trajectories against the full model.

use std::fmt;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::casefile::{BusId, CaseFile};
use crate::emtsim::{
    build_network, check_operating_point, AssembleOptions, FaultSpec, MachineMode, SimConfig,
    SimTrace, Solver, Tap, GROUND,
};
use crate::fdne::{make_injector, FdneCoefficients, FdneRuntime};
use crate::rlsident::{identify_fdne, FitReport, ProbeConfig};
use crate::tsaequiv::{
    aggregate_generators, boundary_draw_phasor, make_tsa_injector, reduce_external, TsaState,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "fdne")]
    Fdne,
    #[serde(rename = "tsa")]
    Tsa,
    #[serde(rename = "fdne+tsa")]
    FdneTsa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Fdne, Variant::Tsa, Variant::FdneTsa];

    pub fn needs_fdne(self) -> bool {
        matches!(self, Variant::Fdne | Variant::FdneTsa)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Fdne => "fdne",
            Variant::Tsa => "tsa",
            Variant::FdneTsa => "fdne+tsa",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "fdne" => Ok(Variant::Fdne),
            "tsa" => Ok(Variant::Tsa),
            "fdne+tsa" | "fdne-tsa" => Ok(Variant::FdneTsa),
            other => Err(Error::Invalid(format!(
                "unknown variant '{other}'; valid: full, fdne, tsa, fdne+tsa"
            ))),
        }
    }
}

/// Shared protocol for one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// EMT step. The default gives an integer number of samples per 60 Hz
    /// cycle (333), which the sliding phasor window relies on.
    pub dt: f64,
    pub duration: f64,
    pub fault: FaultSpec,
    /// EMT steps per phasor-equivalent macro step.
    pub macro_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / (60.0 * 333.0),
            duration: 5.0,
            fault: FaultSpec {
                bus: BusId(8),
                t_on: 0.1,
                t_off: 0.2,
                conductance: 1e4,
            },
            macro_every: 20,
        }
    }
}

impl ScenarioConfig {
    /// Samples in one fundamental cycle at this step (f0 from the case).
    pub fn cycle_samples(&self, f0: f64) -> usize {
        (1.0 / (f0 * self.dt)).round() as usize
    }
}

/// Identification defaults used by the experiment pipeline: the probe runs
/// at the scenario step so the identified model replays at the same rate.
pub fn default_probe(dt: f64) -> ProbeConfig {
    ProbeConfig { dt_s: dt, ..ProbeConfig::default() }
}

/// Model order used for the shipped experiment. Within the probe band the
/// port admittance is dominated by a handful of smooth inductive branches,
/// which four states track to well under a percent. Higher orders spend
/// their extra poles on the band edge, where the record carries little
/// energy, and tend to land them outside the unit circle.
pub const DEFAULT_FDNE_ORDER: usize = 4;

pub fn identify_for_experiment(case: &CaseFile, dt: f64) -> Result<(FdneCoefficients, FitReport)> {
    identify_fdne(case, &default_probe(dt), DEFAULT_FDNE_ORDER, 1.0, 1e9)
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub variant: Variant,
    pub trace: SimTrace,
    pub runtime_s: f64,
    /// Boundary active power from the study side, one value per trace row;
    /// entries before `power_valid_from` repeat the first valid value.
    pub boundary_p: Vec<f64>,
    /// First row with a full phasor window behind it.
    pub power_valid_from: usize,
    /// Hash of the study-area rows/columns of the conductance matrix,
    /// boundary self-term excluded (the only entry a boundary attachment
    /// may legally change).
    pub study_hash: u64,
}

/// Run one variant of the experiment.
///
/// Every variant uses the identical study-area construction, fault
/// protocol and taps; only the boundary attachment differs:
/// full keeps the external network; fdne replays the identified admittance
/// plus a constant source holding the machines' steady contribution; tsa
/// attaches the swing equivalent alone; fdne+tsa attaches both, with the
/// equivalent's fundamental-frequency draw compensated inside the swing
/// injection so it is not counted twice.
pub fn run_scenario(
    case: &CaseFile,
    variant: Variant,
    coeffs: Option<&FdneCoefficients>,
    cfg: &ScenarioConfig,
) -> Result<ScenarioResult> {
    check_operating_point(case, 1e-6)?;
    let f0 = case.base_frequency_hz;
    let omega0 = case.omega0();
    let boundary = case.partition.boundary;
    let v_b0 = case.voltage_phasor(boundary)?;

    if variant.needs_fdne() {
        let c = coeffs.ok_or_else(|| {
            Error::Invalid(format!("variant {variant} needs identified coefficients"))
        })?;
        if (c.dt_s - cfg.dt).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "coefficients were identified at dt = {} s, scenario runs at {} s",
                c.dt_s, cfg.dt
            )));
        }
        if c.port != boundary {
            return Err(Error::Invalid(format!(
                "coefficients are for bus {}, case boundary is {boundary}",
                c.port
            )));
        }
    }

    let opts = AssembleOptions {
        subset: match variant {
            Variant::Full => None,
            _ => Some(case.study_with_boundary()),
        },
        machines: MachineMode::Dynamic,
        include_constant_current_loads: true,
        skip_charging_at: None,
    };
    let mut net = build_network(case, &opts)?;

    let mut hooks = Vec::new();
    // net steady-state current the hooks will inject, included in the
    // steady initialization
    let mut hook_steady = Complex64::new(0.0, 0.0);

    if variant != Variant::Full {
        let i0 = boundary_draw_phasor(case)?;
        if variant.needs_fdne() {
            let c = coeffs.unwrap();
            // charging capacitance and the damping branch at the port are
            // carried as real elements; the hook replays only the rational
            // part
            if c.port_capacitance > 0.0 {
                let node = net.node_of(boundary)?;
                net.add_capacitor(Some("fdne_cport"), Some(node), GROUND, c.port_capacitance);
            }
            if c.damping_c > 0.0 {
                let node = net.node_of(boundary)?;
                let mid = net.add_node(BusId(u32::MAX));
                net.add_series_rl(Some("fdne_damp_rl"), Some(node), Some(mid), c.damping_r, c.damping_l);
                net.add_capacitor(Some("fdne_damp_c"), Some(mid), GROUND, c.damping_c);
            }
            let mut rt = FdneRuntime::new(c.clone())?;
            rt.prime_sinusoid(v_b0, omega0);
            hooks.push(make_injector(rt));
            hook_steady -= c.eval_y(f0) * v_b0;
            if variant == Variant::Fdne {
                // machines' steady contribution as a constant source; the
                // equivalent itself only models the passive network
                let node = net.node_of(boundary)?;
                net.add_phasor_injection(node, c.terminal_admittance(f0) * v_b0 - i0, omega0);
            }
        }
        if matches!(variant, Variant::Tsa | Variant::FdneTsa) {
            let eq = aggregate_generators(case)?;
            // The hook injects -I_b + y60 V_b each macro step, and with
            // the two-port substituted the V_b-proportional part of that
            // works out to (y60 - y_eff) V_b, where y_eff is the boundary
            // driving-point admittance with the machine EMF shorted,
            // y_bb - y_bg y_gb / y_gg. Any residual V_b coefficient is a
            // cycle-delayed feedback loop the study network cannot damp,
            // so the hook must be left carrying only the EMF source term.
            // The combined variant gets this for free: its identified
            // admittance was probed with the EMFs shorted, so its
            // fundamental value already is y_eff. With the phasor
            // equivalent alone a series R-L realizing y_eff at fundamental
            // is stamped and y60 set to match.
            let y60 = match variant {
                Variant::FdneTsa => coeffs.unwrap().terminal_admittance(f0),
                _ => {
                    let red = reduce_external(case, &eq)?;
                    let y_eff = red.y_bb - red.y_bg * red.y_gb / red.y_gg;
                    let z = y_eff.inv();
                    if !(z.re >= 0.0 && z.im > 0.0) {
                        return Err(Error::Invalid(format!(
                            "shorted-source boundary impedance {z} is not an R-L at fundamental"
                        )));
                    }
                    let node = net.node_of(boundary)?;
                    net.add_series_rl(
                        Some("tsa_yext"),
                        Some(node),
                        GROUND,
                        z.re,
                        z.im / omega0,
                    );
                    y_eff
                }
            };
            let st = TsaState::init(case, &eq, y60, cfg.macro_every as f64 * cfg.dt)?;
            hooks.push(make_tsa_injector(st, v_b0, f0, cfg.dt, cfg.macro_every)?);
            hook_steady += -i0 + y60 * v_b0;
        }
    }

    let feeders = boundary_feeder_names(case);
    if feeders.is_empty() {
        return Err(Error::Invalid(
            "boundary bus has no branch into the study area".into(),
        ));
    }
    let mut taps = vec![Tap::NodeVoltage(boundary)];
    if cfg.fault.bus != boundary {
        taps.insert(0, Tap::NodeVoltage(cfg.fault.bus));
    }
    for f in &feeders {
        taps.push(Tap::ElementCurrent(f.clone()));
    }
    for g in &case.generators {
        if case.partition.study.contains(&g.bus) {
            taps.push(Tap::MachineSpeed(format!("G{}", g.bus)));
            taps.push(Tap::MachinePower(format!("G{}", g.bus)));
        }
    }

    let sim = SimConfig {
        dt: cfg.dt,
        duration: cfg.duration,
        f0,
        fault: Some(cfg.fault),
    };
    let mut solver = Solver::new(net, sim)?;
    let extra = [(boundary, hook_steady)];
    solver.init_steady_sinusoid_with(omega0, if variant == Variant::Full { &[] } else { &extra })?;
    let study_hash = study_area_hash(&solver, case)?;

    let started = Instant::now();
    let trace = solver.run(hooks, &taps)?;
    let runtime_s = started.elapsed().as_secs_f64();

    let (boundary_p, power_valid_from) = boundary_power(case, cfg, &trace, &feeders)?;
    Ok(ScenarioResult {
        variant,
        trace,
        runtime_s,
        boundary_p,
        power_valid_from,
        study_hash,
    })
}

/// Names of the study-side branches feeding the boundary bus.
fn boundary_feeder_names(case: &CaseFile) -> Vec<String> {
    let b = case.partition.boundary;
    let study: std::collections::HashSet<BusId> =
        case.partition.study.iter().copied().collect();
    case.branches
        .iter()
        .enumerate()
        .filter(|(_, br)| {
            (br.from == b && study.contains(&br.to)) || (br.to == b && study.contains(&br.from))
        })
        .map(|(bi, br)| format!("branch_{}_{}_{bi}", br.from, br.to))
        .collect()
}

/// Boundary active power seen from the study side: sliding one-cycle
/// phasors of the boundary voltage and the summed feeder currents,
/// P = Re(V conj(I)). Positive means power flowing from the study area
/// into the boundary bus.
fn boundary_power(
    case: &CaseFile,
    cfg: &ScenarioConfig,
    trace: &SimTrace,
    feeders: &[String],
) -> Result<(Vec<f64>, usize)> {
    let b = case.partition.boundary;
    let v = trace
        .channel(&format!("v:{b}"))
        .ok_or_else(|| Error::Invalid("missing boundary voltage channel".into()))?;
    let mut i_sum = vec![0.0; v.len()];
    for f in feeders {
        let sign = if f.starts_with(&format!("branch_{b}_")) { -1.0 } else { 1.0 };
        let ch = trace
            .channel(&format!("i:{f}"))
            .ok_or_else(|| Error::Invalid(format!("missing feeder channel {f}")))?;
        for (acc, x) in i_sum.iter_mut().zip(ch) {
            *acc += sign * x;
        }
    }
    let n = cfg.cycle_samples(case.base_frequency_hz);
    if v.len() < n {
        return Err(Error::WindowMismatch { got: v.len(), expected: n });
    }
    let omega = std::f64::consts::TAU * case.base_frequency_hz;
    let mut p = vec![0.0; v.len()];
    // sliding full-cycle correlation, updated recursively
    let mut vc = Complex64::new(0.0, 0.0);
    let mut ic = Complex64::new(0.0, 0.0);
    let rot = |k: usize| Complex64::from_polar(1.0, -omega * k as f64 * cfg.dt);
    for k in 0..n {
        vc += v[k] * rot(k);
        ic += i_sum[k] * rot(k);
    }
    let scale = 2.0 / n as f64;
    p[n - 1] = ((vc * scale) * (ic * scale).conj()).re;
    for k in n..v.len() {
        vc += v[k] * rot(k) - v[k - n] * rot(k - n);
        ic += i_sum[k] * rot(k) - i_sum[k - n] * rot(k - n);
        p[k] = ((vc * scale) * (ic * scale).conj()).re;
    }
    for k in 0..n - 1 {
        p[k] = p[n - 1];
    }
    Ok((p, n - 1))
}

fn study_area_hash(solver: &Solver, case: &CaseFile) -> Result<u64> {
    let g = solver.conductance_matrix();
    let net = solver.network();
    let b = case.partition.boundary;
    let mut buses = case.study_with_boundary();
    buses.sort();
    let mut h = 0xcbf29ce484222325u64; // FNV-1a
    let mut feed = |x: u64| {
        for byte in x.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for &bi in &buses {
        for &bj in &buses {
            if bi == b && bj == b {
                continue;
            }
            let (i, j) = (net.node_of(bi)?, net.node_of(bj)?);
            feed(g[(i, j)].to_bits());
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: Variant,
    /// Boundary P averaged over the pre-fault window, pu.
    pub pre_fault_p: f64,
    /// Pre-fault steady-state mismatch vs full, percent of the baseline.
    pub pre_fault_pct: f64,
    /// RMS of the percentage error over the whole run.
    pub rms_pct_full_window: f64,
    /// RMS of the percentage error over the post-fault window.
    pub rms_pct_post_fault: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Pre-fault steady boundary P of the full model, the percentage-error
    /// denominator.
    pub baseline_p: f64,
    pub post_fault_from_s: f64,
    pub metrics: Vec<VariantMetrics>,
    /// err(fdne+tsa) < err(tsa) and err(fdne+tsa) < err(fdne) on the
    /// post-fault window.
    pub ordering_ok: Option<bool>,
    /// Every reduced variant ran faster than the full model.
    pub speed_ok: Option<bool>,
    /// All runs shared an identical study-area conductance matrix.
    pub study_construction_consistent: bool,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "baseline boundary P: {:.6} pu", self.baseline_p)?;
        writeln!(
            f,
            "{:<10} {:>12} {:>12} {:>14} {:>14} {:>10}",
            "variant", "pre-fault P", "pre-fault %", "rms % (full)", "rms % (post)", "runtime s"
        )?;
        for m in &self.metrics {
            writeln!(
                f,
                "{:<10} {:>12.6} {:>12.4} {:>14.4} {:>14.4} {:>10.2}",
                m.variant.to_string(),
                m.pre_fault_p,
                m.pre_fault_pct,
                m.rms_pct_full_window,
                m.rms_pct_post_fault,
                m.runtime_s
            )?;
        }
        if let Some(ok) = self.ordering_ok {
            writeln!(
                f,
                "accuracy ordering (fdne+tsa most accurate): {}",
                if ok { "holds" } else { "VIOLATED" }
            )?;
        }
        if let Some(ok) = self.speed_ok {
            writeln!(
                f,
                "speed ordering (reduced faster than full): {}",
                if ok { "holds" } else { "VIOLATED" }
            )?;
        }
        writeln!(
            f,
            "study-area construction identical: {}",
            if self.study_construction_consistent { "yes" } else { "NO" }
        )
    }
}

/// Compare variant runs against the full-model run in the same set.
/// All traces must share the step and length.
pub fn compare(results: &[ScenarioResult], cfg: &ScenarioConfig) -> Result<ComparisonReport> {
    let full = results
        .iter()
        .find(|r| r.variant == Variant::Full)
        .ok_or_else(|| Error::Invalid("comparison needs a full-model run".into()))?;
    for r in results {
        if r.trace.dt != full.trace.dt || r.boundary_p.len() != full.boundary_p.len() {
            return Err(Error::Invalid(format!(
                "trace of variant {} is not aligned with the full run",
                r.variant
            )));
        }
    }
    let dt = full.trace.dt;
    let k_fault = (cfg.fault.t_on / dt).floor() as usize;
    let k_post = (cfg.fault.t_off / dt).ceil() as usize;
    let k0 = full.power_valid_from;
    if k0 >= k_fault {
        return Err(Error::Invalid(
            "no pre-fault window: fault starts before the first full phasor cycle".into(),
        ));
    }
    let baseline_p = full.boundary_p[k0..k_fault].iter().sum::<f64>() / (k_fault - k0) as f64;
    if baseline_p.abs() < 1e-9 {
        return Err(Error::Invalid("steady boundary power is zero; no error scale".into()));
    }

    let rms_pct = |r: &ScenarioResult, from: usize| -> f64 {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for k in from..r.boundary_p.len() {
            let e = 100.0 * (r.boundary_p[k] - full.boundary_p[k]) / baseline_p.abs();
            acc += e * e;
            cnt += 1;
        }
        (acc / cnt.max(1) as f64).sqrt()
    };

    let mut metrics = Vec::new();
    for r in results {
        let pre = r.boundary_p[k0..k_fault].iter().sum::<f64>() / (k_fault - k0) as f64;
        metrics.push(VariantMetrics {
            variant: r.variant,
            pre_fault_p: pre,
            pre_fault_pct: 100.0 * (pre - baseline_p).abs() / baseline_p.abs(),
            rms_pct_full_window: rms_pct(r, k0),
            rms_pct_post_fault: rms_pct(r, k_post),
            runtime_s: r.runtime_s,
        });
    }

    let get = |v: Variant| metrics.iter().find(|m| m.variant == v);
    let ordering_ok = match (get(Variant::FdneTsa), get(Variant::Tsa), get(Variant::Fdne)) {
        (Some(both), Some(tsa), Some(fdne)) => Some(
            both.rms_pct_post_fault < tsa.rms_pct_post_fault
                && both.rms_pct_post_fault < fdne.rms_pct_post_fault,
        ),
        _ => None,
    };
    let full_rt = full.runtime_s;
    let reduced: Vec<&VariantMetrics> =
        metrics.iter().filter(|m| m.variant != Variant::Full).collect();
    let speed_ok = if reduced.is_empty() {
        None
    } else {
        Some(reduced.iter().all(|m| m.runtime_s < full_rt))
    };
    let study_construction_consistent =
        results.iter().all(|r| r.study_hash == full.study_hash);

    Ok(ComparisonReport {
        baseline_p,
        post_fault_from_s: cfg.fault.t_off,
        metrics,
        ordering_ok,
        speed_ok,
        study_construction_consistent,
    })
}

/// Identify once, run all four variants, and compare.
pub fn run_experiment(case: &CaseFile, cfg: &ScenarioConfig) -> Result<(Vec<ScenarioResult>, ComparisonReport)> {
    let (coeffs, report) = identify_for_experiment(case, cfg.dt)?;
    if !report.stable {
        return Err(Error::UnstableModel {
            modulus: report.pole_moduli.iter().cloned().fold(0.0, f64::max),
        });
    }
    let mut results = Vec::new();
    for v in Variant::ALL {
        results.push(run_scenario(case, v, Some(&coeffs), cfg)?);
    }
    let report = compare(&results, cfg)?;
    Ok((results, report))
}
