//! Phasor-domain dynamic equivalent of the external area: fundamental-phasor
//! extraction from sampled waveforms, inertial aggregation of the external
//! generators, reduction of the external network to a two-port {boundary,
//! generator} admittance, the per-macro-step swing/injection recursion, and
//! the constant-current boundary source used when no machine dynamics are
//! attached.
//!
//! Phasor convention: peak magnitude, angle referenced to the global t = 0
//! cosine, so `v(t) = |V| cos(w0 t + arg V)` and complex power is
//! `S = V conj(I)` in per-unit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::casefile::{BusId, CaseFile};
use crate::emtsim::InjectionHook;
use crate::netmodel::{build_admittance, kron_reduce, AdmittanceOptions, ComplexMatrix, LoadTreatment};
use crate::{Error, Result};

/// Fundamental-frequency component of a signal: peak magnitude and angle
/// against the global cosine reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    pub magnitude: f64,
    pub angle_rad: f64,
}

impl Phasor {
    pub fn from_complex(c: Complex64) -> Self {
        Self { magnitude: c.norm(), angle_rad: c.arg() }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.angle_rad)
    }

    /// Sample value at time `t` under the peak convention.
    pub fn instantaneous(self, omega: f64, t: f64) -> f64 {
        self.magnitude * (omega * t + self.angle_rad).cos()
    }
}

/// Full-cycle DFT at the fundamental. `samples[j]` is the value at
/// `t_start + j dt`; the window must hold exactly one fundamental cycle,
/// `round(1/(f0 dt))` samples. Integer harmonics of f0 are nulled by the
/// full-cycle window.
pub fn extract_phasor(samples: &[f64], f0: f64, dt: f64, t_start: f64) -> Result<Phasor> {
    let n = (1.0 / (f0 * dt)).round() as usize;
    if samples.len() != n || n == 0 {
        return Err(Error::WindowMismatch { got: samples.len(), expected: n });
    }
    let omega = std::f64::consts::TAU * f0;
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &x) in samples.iter().enumerate() {
        let t = t_start + j as f64 * dt;
        acc += x * Complex64::from_polar(1.0, -omega * t);
    }
    Ok(Phasor::from_complex(acc * 2.0 / n as f64))
}

pub fn phasor_to_instantaneous(p: Phasor, f0: f64, t: f64) -> f64 {
    p.instantaneous(std::f64::consts::TAU * f0, t)
}

/// Boundary current phasor computed from a boundary power flow, for holding
/// the boundary at its initial steady state when no dynamic model of the
/// external machines is attached: `I = conj((P + jQ)/V)`.
pub fn constant_current_boundary(p_pu: f64, q_pu: f64, v: Complex64) -> Result<Complex64> {
    if v.norm() == 0.0 {
        return Err(Error::Invalid("boundary voltage phasor is zero".into()));
    }
    Ok((Complex64::new(p_pu, q_pu) / v).conj())
}

/// Inertially aggregated external machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalentGenerator {
    /// Representative terminal bus label (first external generator bus);
    /// the reduced network merges every external generator bus into it.
    pub bus: BusId,
    /// Aggregate rating, MVA.
    pub s_mva: f64,
    /// MVA-weighted inertia, seconds, on the aggregate base.
    pub h_s: f64,
    /// MVA-weighted damping, pu on the aggregate base.
    pub d_pu: f64,
    /// Parallel combination of the machine transient reactances, pu on the
    /// system base.
    pub xdp_system_pu: f64,
    /// Internal EMF phasor at the operating point.
    pub e0: Complex64,
    /// Mechanical power, pu on the system base.
    pub pm_pu: f64,
}

/// MVA-weighted aggregation of the external generators: ratings add,
/// H and D average weighted by rating, transient reactances combine in
/// parallel on the system base. The aggregate EMF is computed from the
/// summed terminal power behind the equivalent reactance, at the
/// rating-weighted mean terminal voltage.
pub fn aggregate_generators(case: &CaseFile) -> Result<EquivalentGenerator> {
    let gens = case.external_generator_list();
    if gens.is_empty() {
        return Err(Error::Invalid("no external generators to aggregate".into()));
    }
    let s_mva: f64 = gens.iter().map(|g| g.mva).sum();
    let h_s = gens.iter().map(|g| g.inertia_s * g.mva).sum::<f64>() / s_mva;
    let d_pu = gens.iter().map(|g| g.damping_pu * g.mva).sum::<f64>() / s_mva;
    let xdp_system_pu = 1.0
        / gens
            .iter()
            .map(|g| 1.0 / g.xd_prime_system(case.base_mva))
            .sum::<f64>();
    let s_agg: Complex64 = gens
        .iter()
        .map(|g| Complex64::new(g.p_pu, g.q_pu))
        .sum();
    let mut v_t = Complex64::new(0.0, 0.0);
    for g in gens.iter() {
        v_t += case.voltage_phasor(g.bus)? * g.mva;
    }
    v_t /= s_mva;
    let i = (s_agg / v_t).conj();
    let e0 = v_t + Complex64::new(0.0, xdp_system_pu) * i;
    Ok(EquivalentGenerator {
        bus: gens[0].bus,
        s_mva,
        h_s,
        d_pu,
        xdp_system_pu,
        e0,
        pm_pu: s_agg.re,
    })
}

/// Two-port phasor network seen from the boundary bus and the merged
/// generator bus, with the equivalent machine reactance folded into the
/// generator-port self term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedExternal {
    pub boundary: BusId,
    pub gen_bus: BusId,
    pub y_bb: Complex64,
    pub y_bg: Complex64,
    pub y_gb: Complex64,
    pub y_gg: Complex64,
    /// Machine admittance already included in `y_gg`.
    pub y_machine: Complex64,
}

impl ReducedExternal {
    /// Largest relative asymmetry of the two-port (the underlying network
    /// is reciprocal, so this should be at rounding level).
    pub fn asymmetry(&self) -> f64 {
        let scale = [self.y_bb, self.y_bg, self.y_gb, self.y_gg]
            .iter()
            .map(|y| y.norm())
            .fold(1.0, f64::max);
        (self.y_bg - self.y_gb).norm() / scale
    }
}

/// Reduce the external area (constant-impedance loads in, machine EMFs out)
/// to the boundary bus and one merged generator bus, then fold the
/// equivalent machine reactance into the generator self-admittance. All
/// external generator terminal buses are collapsed onto `eq.bus` before the
/// elimination; this is where the coherency assumption enters.
pub fn reduce_external(case: &CaseFile, eq: &EquivalentGenerator) -> Result<ReducedExternal> {
    let subset = case.external_with_boundary();
    let boundary = case.partition.boundary;
    let y = build_admittance(
        case,
        &subset,
        case.omega0(),
        AdmittanceOptions {
            include_machine_reactance: false,
            loads: LoadTreatment::ConstantImpedance,
        },
    )?;

    let gen_buses = &case.partition.external_generators;
    let merged = merge_buses(&y, gen_buses, eq.bus)?;
    let red = kron_reduce(&merged, &[boundary, eq.bus])?;

    let y_machine = Complex64::new(0.0, -1.0 / eq.xdp_system_pu); // 1/(jX'd)
    Ok(ReducedExternal {
        boundary,
        gen_bus: eq.bus,
        y_bb: red.at(boundary, boundary)?,
        y_bg: red.at(boundary, eq.bus)?,
        y_gb: red.at(eq.bus, boundary)?,
        y_gg: red.at(eq.bus, eq.bus)? + y_machine,
        y_machine,
    })
}

/// Collapse the listed buses onto `target` by summing their rows and
/// columns.
fn merge_buses(y: &ComplexMatrix, group: &[BusId], target: BusId) -> Result<ComplexMatrix> {
    if !group.contains(&target) {
        return Err(Error::Invalid("merge target must be in the merged group".into()));
    }
    let new_labels: Vec<BusId> = y
        .labels()
        .iter()
        .copied()
        .filter(|id| !group.contains(id) || *id == target)
        .collect();
    let map: Vec<usize> = y
        .labels()
        .iter()
        .map(|id| {
            let dest = if group.contains(id) { target } else { *id };
            new_labels.iter().position(|l| *l == dest).unwrap()
        })
        .collect();
    let n = new_labels.len();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..y.dim() {
        for j in 0..y.dim() {
            m[(map[i], map[j])] += y.matrix()[(i, j)];
        }
    }
    Ok(ComplexMatrix::from_parts(new_labels, m))
}

/// Steady-state current drawn from the boundary bus into the external area,
/// summed over the boundary-to-external branches (series current plus the
/// boundary-side half of their charging).
pub fn boundary_draw_phasor(case: &CaseFile) -> Result<Complex64> {
    let b = case.partition.boundary;
    let v_b = case.voltage_phasor(b)?;
    let ext: std::collections::HashSet<BusId> =
        case.partition.external.iter().copied().collect();
    let mut i = Complex64::new(0.0, 0.0);
    let mut any = false;
    for br in &case.branches {
        let other = if br.from == b && ext.contains(&br.to) {
            br.to
        } else if br.to == b && ext.contains(&br.from) {
            br.from
        } else {
            continue;
        };
        any = true;
        let y = 1.0 / Complex64::new(br.r_pu, br.x_pu);
        i += (v_b - case.voltage_phasor(other)?) * y;
        i += v_b * Complex64::new(0.0, br.b_pu / 2.0);
    }
    if !any {
        return Err(Error::Invalid(
            "boundary bus has no branch into the external area".into(),
        ));
    }
    Ok(i)
}

/// Swing-equation state of the aggregated external machine plus the reduced
/// two-port it feeds.
#[derive(Debug, Clone)]
pub struct TsaState {
    pub red: ReducedExternal,
    /// Internal EMF magnitude, held constant.
    pub e_mag: f64,
    /// EMF angle, rad, in the synchronous frame.
    pub delta: f64,
    /// Speed deviation, pu.
    pub domega: f64,
    /// Mechanical power, pu system base.
    pub pm: f64,
    /// Inertia on the system base, s.
    pub h_sys: f64,
    /// Damping on the system base, pu.
    pub d_sys: f64,
    pub omega0: f64,
    /// Fundamental-frequency admittance of whatever wideband equivalent is
    /// attached alongside this model; its fundamental draw is compensated
    /// in the injection so it is not counted twice. Zero when running
    /// alone behind a fixed fundamental shunt of equal value.
    pub y60: Complex64,
    /// Macro step, s.
    pub dt_tsa: f64,
}

/// One macro-step result.
#[derive(Debug, Clone, Copy)]
pub struct TsaStep {
    /// Merged generator bus voltage.
    pub v_g: Complex64,
    /// Current drawn from the boundary into the (replaced) external area.
    pub i_b: Complex64,
    /// Current to inject at the boundary bus: `-i_b + y60 v_b`.
    pub i_binj: Complex64,
    pub pe: f64,
}

impl TsaState {
    /// Initialize at the case operating point so that the first step is an
    /// exact fixed point: the generator-port voltage is chosen to reproduce
    /// the full-model boundary draw, and Pm is set to the resulting
    /// electrical power.
    pub fn init(case: &CaseFile, eq: &EquivalentGenerator, y60: Complex64, dt_tsa: f64) -> Result<Self> {
        if dt_tsa <= 0.0 {
            return Err(Error::Invalid("macro step must be positive".into()));
        }
        let red = reduce_external(case, eq)?;
        let v_b0 = case.voltage_phasor(red.boundary)?;
        let i0 = boundary_draw_phasor(case)?;
        if red.y_bg.norm() < 1e-12 {
            return Err(Error::Invalid(
                "boundary and generator ports are decoupled".into(),
            ));
        }
        let v_g0 = (i0 - red.y_bb * v_b0) / red.y_bg;
        let i_g0 = red.y_gb * v_b0 + red.y_gg * v_g0;
        let e0 = i_g0 / red.y_machine;
        let i_mach0 = i_g0 - red.y_machine * v_g0;
        let pm = (e0 * i_mach0.conj()).re;
        let h_sys = eq.h_s * eq.s_mva / case.base_mva;
        let d_sys = eq.d_pu * eq.s_mva / case.base_mva;
        Ok(Self {
            red,
            e_mag: e0.norm(),
            delta: e0.arg(),
            domega: 0.0,
            pm,
            h_sys,
            d_sys,
            omega0: case.omega0(),
            y60,
            dt_tsa,
        })
    }

    fn electrical(&self, delta: f64, v_b: Complex64) -> (Complex64, Complex64, f64) {
        let e = Complex64::from_polar(self.e_mag, delta);
        let i_g = self.red.y_machine * e;
        let v_g = (i_g - self.red.y_gb * v_b) / self.red.y_gg;
        let i_mach = i_g - self.red.y_machine * v_g;
        let pe = (e * i_mach.conj()).re;
        (v_g, i_mach, pe)
    }

    /// Advance one macro step with the boundary voltage phasor held, then
    /// return the post-step port quantities. Heun integration with the
    /// electrical power re-evaluated at the predictor state.
    pub fn step(&mut self, v_b: Complex64) -> Result<TsaStep> {
        if !v_b.re.is_finite() || !v_b.im.is_finite() {
            return Err(Error::NonFinite { step: 0, what: "boundary voltage phasor".into() });
        }
        let dt = self.dt_tsa;
        let f = |delta: f64, dom: f64| {
            let (_, _, pe) = self.electrical(delta, v_b);
            (
                self.omega0 * dom,
                (self.pm - pe - self.d_sys * dom) / (2.0 * self.h_sys),
            )
        };
        let (k1d, k1w) = f(self.delta, self.domega);
        let (k2d, k2w) = f(self.delta + dt * k1d, self.domega + dt * k1w);
        self.delta += dt * 0.5 * (k1d + k2d);
        self.domega += dt * 0.5 * (k1w + k2w);

        let (v_g, _, pe) = self.electrical(self.delta, v_b);
        let i_b = self.red.y_bb * v_b + self.red.y_bg * v_g;
        Ok(TsaStep { v_g, i_b, i_binj: -i_b + self.y60 * v_b, pe })
    }
}

/// Couple a phasor-domain external model into the EMT solver at its
/// boundary bus. Every `macro_every` EMT steps the hook extracts the
/// fundamental phasor of the boundary voltage from a one-cycle window of
/// strictly past samples, advances the swing state, and refreshes the
/// injection phasor; in between it plays the phasor out as an instantaneous
/// current. The window is pre-filled with the operating-point sinusoid so
/// the first macro step sees the steady phasor.
pub fn make_tsa_injector(
    mut state: TsaState,
    v_b0: Complex64,
    f0: f64,
    dt_emt: f64,
    macro_every: usize,
) -> Result<InjectionHook> {
    if macro_every == 0 {
        return Err(Error::Invalid("macro_every must be at least 1".into()));
    }
    let n = (1.0 / (f0 * dt_emt)).round() as usize;
    if n < 2 {
        return Err(Error::Invalid("EMT step too large for phasor extraction".into()));
    }
    let omega = std::f64::consts::TAU * f0;
    let boundary = state.red.boundary;
    // state before the first call: the call at t = 0 pushes v(-dt), after
    // which the window must span -n dt .. -dt
    let mut buf: VecDeque<f64> = (0..n)
        .map(|j| {
            let t = (j as f64 - n as f64 - 1.0) * dt_emt;
            (v_b0 * Complex64::from_polar(1.0, omega * t)).re
        })
        .collect();
    let mut inj = Complex64::new(0.0, 0.0);
    let mut err: Option<Error> = None;
    Ok(InjectionHook::new(boundary, move |k, t, v_prev| {
        if err.is_some() {
            return f64::NAN; // propagate failure through the solver's finite check
        }
        buf.pop_front();
        buf.push_back(v_prev);
        if k % macro_every == 0 {
            let t_start = t - n as f64 * dt_emt;
            buf.make_contiguous();
            let res = extract_phasor(buf.as_slices().0, f0, dt_emt, t_start)
                .and_then(|p| state.step(p.to_complex()));
            match res {
                Ok(step) => inj = step.i_binj,
                Err(e) => {
                    err = Some(e);
                    return f64::NAN;
                }
            }
        }
        (inj * Complex64::from_polar(1.0, omega * t)).re
    }))
}
