//! Network builder, trapezoidal companion elements, classical machines, and
//! the fixed-step solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{InjectionHook, SimConfig, SimTrace};
use crate::casefile::BusId;
use crate::{Error, Result};

/// Ground terminal for element endpoints.
pub const GROUND: Option<usize> = None;

#[derive(Debug, Clone, Copy)]
enum ElementKind {
    /// Pure conductance, stateless.
    Resistor { g: f64 },
    /// Series R-L (L > 0). Trapezoidal companion
    /// `i(k) = geq v(k) + alpha i(k-1) + geq v(k-1)`.
    SeriesRl { r: f64, l: f64 },
    /// Capacitance to `i(k) = geq (v(k) - v(k-1)) - i(k-1)`.
    Capacitor { c: f64 },
}

struct Element {
    name: Option<String>,
    a: Option<usize>,
    b: Option<usize>,
    kind: ElementKind,
    // companion constants, fixed once dt is known
    geq: f64,
    alpha: f64,
    // state: branch voltage (a->b) and current at the previous step
    v_prev: f64,
    i_prev: f64,
    // the history current computed at the top of the current step
    i_hist: f64,
}

impl Element {
    fn prepare(&mut self, dt: f64) {
        match self.kind {
            ElementKind::Resistor { g } => {
                self.geq = g;
                self.alpha = 0.0;
            }
            ElementKind::SeriesRl { r, l } => {
                self.geq = dt / (2.0 * l + r * dt);
                self.alpha = (2.0 * l - r * dt) / (2.0 * l + r * dt);
            }
            ElementKind::Capacitor { c } => {
                self.geq = 2.0 * c / dt;
                self.alpha = -1.0;
            }
        }
    }

    fn history(&self) -> f64 {
        match self.kind {
            ElementKind::Resistor { .. } => 0.0,
            ElementKind::SeriesRl { .. } => self.alpha * self.i_prev + self.geq * self.v_prev,
            ElementKind::Capacitor { .. } => -self.i_prev - self.geq * self.v_prev,
        }
    }

    /// Discrete admittance of the companion recursion at z = e^{j theta}.
    fn discrete_admittance(&self, theta: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -theta); // z^-1
        match self.kind {
            ElementKind::Resistor { g } => Complex64::new(g, 0.0),
            ElementKind::SeriesRl { .. } => {
                self.geq * (1.0 + z1) / (1.0 - self.alpha * z1)
            }
            ElementKind::Capacitor { .. } => self.geq * (1.0 - z1) / (1.0 + z1),
        }
    }

    /// Set the state to the sinusoidal steady point at t = -dt given the
    /// branch voltage/current phasors at t = 0.
    fn init_phasor(&mut self, v_ph: Complex64, i_ph: Complex64, theta: f64) {
        let rot = Complex64::from_polar(1.0, -theta);
        self.v_prev = (v_ph * rot).re;
        self.i_prev = (i_ph * rot).re;
    }
}

/// Classical synchronous machine: constant EMF magnitude behind X'd, swing
/// dynamics with H and D, interfaced as a Norton source refreshed each step.
pub(crate) struct Machine {
    pub name: String,
    node: usize,
    /// EMF magnitude E', pu.
    pub e_mag: f64,
    /// Absolute EMF angle theta(t); rotor angle is theta - omega0 t.
    pub theta: f64,
    /// Speed deviation, pu.
    pub domega: f64,
    /// Mechanical power, pu system base.
    pub pm: f64,
    /// Inertia, seconds on system base.
    h: f64,
    /// Damping, pu on system base.
    d: f64,
    /// X'd / omega0, the EMF branch inductance.
    l: f64,
    omega0: f64,
    geq: f64,
    v_prev: f64,
    i_prev: f64,
    i_hist: f64,
    // one-cycle window of 2 e i samples; the mean is Pe
    pe_buf: Vec<f64>,
    pe_idx: usize,
    /// Windowed electrical power, pu.
    pub pe: f64,
}

impl Machine {
    fn prepare(&mut self, dt: f64, f0: f64) {
        self.geq = dt / (2.0 * self.l);
        let w = (1.0 / (f0 * dt)).round().max(1.0) as usize;
        self.pe_buf = vec![0.0; w];
        self.pe_idx = 0;
    }

    fn emf(&self) -> f64 {
        self.e_mag * self.theta.cos()
    }

    fn swing_rates(&self, domega: f64, pe: f64) -> (f64, f64) {
        let dtheta = self.omega0 * (1.0 + domega);
        let ddom = (self.pm - pe - self.d * domega) / (2.0 * self.h);
        (dtheta, ddom)
    }

    /// Heun step of (theta, domega) with Pe held over the step.
    fn advance(&mut self, dt: f64) {
        let (k1t, k1w) = self.swing_rates(self.domega, self.pe);
        let wp = self.domega + dt * k1w;
        let (k2t, k2w) = self.swing_rates(wp, self.pe);
        self.theta += 0.5 * dt * (k1t + k2t);
        self.domega += 0.5 * dt * (k1w + k2w);
    }

    fn push_power(&mut self, p: f64) {
        self.pe_buf[self.pe_idx] = p;
        self.pe_idx = (self.pe_idx + 1) % self.pe_buf.len();
        self.pe = self.pe_buf.iter().sum::<f64>() / self.pe_buf.len() as f64;
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Waveform {
    Sinusoid { mag: f64, phase: f64, omega: f64 },
    Step { level: f64, t_on: f64 },
    /// Per-step samples; zero beyond the end.
    Samples(std::sync::Arc<Vec<f64>>),
}

impl Waveform {
    fn value(&self, k: usize, t: f64) -> f64 {
        match self {
            Waveform::Sinusoid { mag, phase, omega } => mag * (omega * t + phase).cos(),
            Waveform::Step { level, t_on } => {
                if t >= *t_on {
                    *level
                } else {
                    0.0
                }
            }
            Waveform::Samples(s) => s.get(k).copied().unwrap_or(0.0),
        }
    }
}

/// Stiff Norton voltage source: series conductance `g` to the driven node.
pub(crate) struct Source {
    name: String,
    node: usize,
    g: f64,
    wave: Waveform,
    /// Current delivered into the network at the last solved step.
    i_last: f64,
}

/// Fixed sinusoidal current injection (constant-current loads and boundary
/// sources).
struct PhasorInjection {
    node: usize,
    phasor: Complex64,
    omega: f64,
}

/// A network under construction: nodes labeled by bus id, passive elements,
/// machines and sources.
pub struct Network {
    labels: Vec<BusId>,
    elements: Vec<Element>,
    machines: Vec<Machine>,
    sources: Vec<Source>,
    injections: Vec<PhasorInjection>,
}

impl Default for Network {
    fn default() -> Self {
        Self::new()
    }
}

impl Network {
    pub fn new() -> Self {
        Self {
            labels: Vec::new(),
            elements: Vec::new(),
            machines: Vec::new(),
            sources: Vec::new(),
            injections: Vec::new(),
        }
    }

    pub fn add_node(&mut self, id: BusId) -> usize {
        assert!(!self.labels.contains(&id), "duplicate node {id}");
        self.labels.push(id);
        self.labels.len() - 1
    }

    pub fn node_of(&self, id: BusId) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| *l == id)
            .ok_or(Error::UnknownBus(id))
    }

    pub fn labels(&self) -> &[BusId] {
        &self.labels
    }

    pub fn add_resistor(&mut self, name: Option<&str>, a: Option<usize>, b: Option<usize>, r: f64) {
        assert!(r > 0.0);
        self.push_element(name, a, b, ElementKind::Resistor { g: 1.0 / r });
    }

    pub fn add_conductance(
        &mut self,
        name: Option<&str>,
        a: Option<usize>,
        b: Option<usize>,
        g: f64,
    ) {
        assert!(g > 0.0);
        self.push_element(name, a, b, ElementKind::Resistor { g });
    }

    /// Series R-L branch; `l` must be positive (use `add_resistor` for R-only).
    pub fn add_series_rl(
        &mut self,
        name: Option<&str>,
        a: Option<usize>,
        b: Option<usize>,
        r: f64,
        l: f64,
    ) {
        assert!(l > 0.0, "series R-L requires L > 0");
        self.push_element(name, a, b, ElementKind::SeriesRl { r, l });
    }

    pub fn add_capacitor(
        &mut self,
        name: Option<&str>,
        a: Option<usize>,
        b: Option<usize>,
        c: f64,
    ) {
        assert!(c > 0.0);
        self.push_element(name, a, b, ElementKind::Capacitor { c });
    }

    fn push_element(
        &mut self,
        name: Option<&str>,
        a: Option<usize>,
        b: Option<usize>,
        kind: ElementKind,
    ) {
        assert!(a.is_some() || b.is_some(), "element floating on both ends");
        self.elements.push(Element {
            name: name.map(str::to_owned),
            a,
            b,
            kind,
            geq: 0.0,
            alpha: 0.0,
            v_prev: 0.0,
            i_prev: 0.0,
            i_hist: 0.0,
        });
    }

    /// Set an element's initial (capacitor voltage / inductor current) state
    /// directly, treating it as at rest at that point before t = 0.
    pub fn set_element_state(&mut self, name: &str, v: f64, i: f64) {
        let el = self
            .elements
            .iter_mut()
            .find(|e| e.name.as_deref() == Some(name))
            .expect("no such element");
        el.v_prev = v;
        el.i_prev = i;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_machine(
        &mut self,
        name: &str,
        node: usize,
        e_mag: f64,
        delta0: f64,
        pm: f64,
        h_system_s: f64,
        d_system_pu: f64,
        xd_prime_system: f64,
        omega0: f64,
    ) {
        assert!(e_mag > 0.0 && h_system_s > 0.0 && xd_prime_system > 0.0);
        self.machines.push(Machine {
            name: name.to_owned(),
            node,
            e_mag,
            theta: delta0,
            domega: 0.0,
            pm,
            h: h_system_s,
            d: d_system_pu,
            l: xd_prime_system / omega0,
            omega0,
            geq: 0.0,
            v_prev: 0.0,
            i_prev: 0.0,
            i_hist: 0.0,
            pe_buf: Vec::new(),
            pe_idx: 0,
            pe: 0.0,
        });
    }

    /// Stiff voltage source (Norton with large conductance) at a node.
    pub fn add_voltage_source(&mut self, name: &str, node: usize, wave_sinusoid: Option<(f64, f64, f64)>) {
        let wave = match wave_sinusoid {
            Some((mag, phase, omega)) => Waveform::Sinusoid { mag, phase, omega },
            None => Waveform::Step { level: 0.0, t_on: 0.0 },
        };
        self.sources.push(Source { name: name.to_owned(), node, g: STIFF_SOURCE_G, wave, i_last: 0.0 });
    }

    pub fn add_step_source(&mut self, name: &str, node: usize, level: f64, t_on: f64) {
        self.sources.push(Source {
            name: name.to_owned(),
            node,
            g: STIFF_SOURCE_G,
            wave: Waveform::Step { level, t_on },
            i_last: 0.0,
        });
    }

    pub fn add_sampled_source(&mut self, name: &str, node: usize, samples: Vec<f64>) {
        self.sources.push(Source {
            name: name.to_owned(),
            node,
            g: STIFF_SOURCE_G,
            wave: Waveform::Samples(std::sync::Arc::new(samples)),
            i_last: 0.0,
        });
    }

    /// Fixed sinusoidal current injection into a node (peak-convention
    /// phasor at the given angular frequency).
    pub fn add_phasor_injection(&mut self, node: usize, phasor: Complex64, omega: f64) {
        self.injections.push(PhasorInjection { node, phasor, omega });
    }

    pub fn machine_names(&self) -> Vec<String> {
        self.machines.iter().map(|m| m.name.clone()).collect()
    }
}

const STIFF_SOURCE_G: f64 = 1e6;

/// What to record each step.
#[derive(Debug, Clone)]
pub enum Tap {
    NodeVoltage(BusId),
    /// Branch current of a named element, a -> b.
    ElementCurrent(String),
    /// Current a named source delivers into the network.
    SourceCurrent(String),
    /// Rotor angle (theta - omega0 t), rad.
    MachineAngle(String),
    /// Speed deviation, pu.
    MachineSpeed(String),
    /// Windowed electrical power, pu.
    MachinePower(String),
}

impl Tap {
    fn channel_name(&self) -> String {
        match self {
            Tap::NodeVoltage(b) => format!("v:{b}"),
            Tap::ElementCurrent(n) => format!("i:{n}"),
            Tap::SourceCurrent(n) => format!("isrc:{n}"),
            Tap::MachineAngle(n) => format!("delta:{n}"),
            Tap::MachineSpeed(n) => format!("speed:{n}"),
            Tap::MachinePower(n) => format!("pe:{n}"),
        }
    }
}

enum TapRef {
    Node(usize),
    Element(usize),
    Source(usize),
    MachineAngle(usize),
    MachineSpeed(usize),
    MachinePower(usize),
}

/// Fixed-step solver over an assembled [`Network`].
pub struct Solver {
    net: Network,
    config: SimConfig,
    g_base: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    fault_node: Option<usize>,
    fault_active: bool,
    v: DVector<f64>,
    v_prev: DVector<f64>,
}

impl Solver {
    pub fn new(mut net: Network, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let n = net.labels.len();
        for el in &mut net.elements {
            el.prepare(config.dt);
        }
        for m in &mut net.machines {
            m.prepare(config.dt, config.f0);
        }
        let mut g = DMatrix::zeros(n, n);
        let mut stamp = |a: Option<usize>, b: Option<usize>, geq: f64| {
            if let Some(i) = a {
                g[(i, i)] += geq;
            }
            if let Some(j) = b {
                g[(j, j)] += geq;
            }
            if let (Some(i), Some(j)) = (a, b) {
                g[(i, j)] -= geq;
                g[(j, i)] -= geq;
            }
        };
        for el in &net.elements {
            stamp(el.a, el.b, el.geq);
        }
        for m in &net.machines {
            stamp(Some(m.node), None, m.geq);
        }
        for s in &net.sources {
            stamp(Some(s.node), None, s.g);
        }
        let fault_node = match &config.fault {
            Some(f) => Some(net.node_of(f.bus)?),
            None => None,
        };
        for (i, row) in g.row_iter().enumerate() {
            // a node held up only by the fault shunt is legal while the
            // fault is applied
            if row.iter().all(|x| *x == 0.0) && Some(i) != fault_node {
                return Err(Error::IsolatedNode(net.labels[i]));
            }
        }
        let fault_active = config.fault.map_or(false, |f| f.t_on <= 0.0);
        let mut solver = Self {
            net,
            config,
            g_base: g,
            lu: DMatrix::identity(n, n).lu(),
            fault_node,
            fault_active,
            v: DVector::zeros(n),
            v_prev: DVector::zeros(n),
        };
        solver.refactor()?;
        Ok(solver)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// The base conductance matrix (pre-fault topology).
    pub fn conductance_matrix(&self) -> &DMatrix<f64> {
        &self.g_base
    }

    /// Conductance matrix for the current fault state.
    pub fn active_conductance_matrix(&self) -> DMatrix<f64> {
        let mut g = self.g_base.clone();
        if self.fault_active {
            let node = self.fault_node.expect("fault node resolved at construction");
            g[(node, node)] += self.config.fault.as_ref().unwrap().conductance;
        }
        g
    }

    /// Insert or remove the configured shunt fault and mark the conductance
    /// matrix for refactorization.
    pub fn apply_fault(&mut self, on: bool) -> Result<()> {
        if self.config.fault.is_none() {
            return Err(Error::Invalid("no fault configured".into()));
        }
        self.fault_active = on;
        self.refactor()
    }

    fn refactor(&mut self) -> Result<()> {
        let mut g = self.active_conductance_matrix();
        if let Some(node) = self.fault_node {
            // clearing a fault on a node with no other attachments leaves a
            // zero row; pin the node so it holds its (zero) injection
            if !self.fault_active && g.row(node).iter().all(|x| *x == 0.0) {
                g[(node, node)] = 1.0;
            }
        }
        let lu = g.lu();
        if !lu_is_usable(&lu) {
            return Err(Error::IsolatedNode(self.net.labels[0]));
        }
        self.lu = lu;
        Ok(())
    }

    /// Initialize every stateful element, machine and node history to the
    /// discrete sinusoidal steady state at `omega`, so a subsequent run
    /// starts ripple-free. Machine mechanical power is set to the resulting
    /// electrical power (the discrete equilibrium).
    pub fn init_steady_sinusoid(&mut self, omega: f64) -> Result<()> {
        self.init_steady_sinusoid_with(omega, &[])
    }

    /// Steady-state initialization with additional phasor current
    /// injections included in the solve but not owned by the network;
    /// used when injection hooks will supply those currents during the
    /// run (the hooks themselves must be primed to the same phasors).
    pub fn init_steady_sinusoid_with(
        &mut self,
        omega: f64,
        extra: &[(BusId, Complex64)],
    ) -> Result<()> {
        let n = self.net.labels.len();
        let theta = omega * self.config.dt;
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        let mut rhs = DVector::<Complex64>::zeros(n);
        let stamp = |y: &mut DMatrix<Complex64>, a: Option<usize>, b: Option<usize>, yd: Complex64| {
            if let Some(i) = a {
                y[(i, i)] += yd;
            }
            if let Some(j) = b {
                y[(j, j)] += yd;
            }
            if let (Some(i), Some(j)) = (a, b) {
                y[(i, j)] -= yd;
                y[(j, i)] -= yd;
            }
        };
        for el in &self.net.elements {
            stamp(&mut y, el.a, el.b, el.discrete_admittance(theta));
        }
        for m in &self.net.machines {
            // pure-L companion from EMF to node
            let z1 = Complex64::from_polar(1.0, -theta);
            let yd = m.geq * (1.0 + z1) / (1.0 - z1);
            stamp(&mut y, Some(m.node), None, yd);
            let e_ph = Complex64::from_polar(m.e_mag, m.theta);
            rhs[m.node] += yd * e_ph;
        }
        for s in &self.net.sources {
            stamp(&mut y, Some(s.node), None, Complex64::new(s.g, 0.0));
            if let Waveform::Sinusoid { mag, phase, omega: so } = s.wave {
                if (so - omega).abs() > 1e-9 {
                    return Err(Error::Invalid(
                        "steady init requires sources at the init frequency".into(),
                    ));
                }
                rhs[s.node] += s.g * Complex64::from_polar(mag, phase);
            }
        }
        for inj in &self.net.injections {
            if (inj.omega - omega).abs() > 1e-9 {
                return Err(Error::Invalid(
                    "steady init requires injections at the init frequency".into(),
                ));
            }
            rhs[inj.node] += inj.phasor;
        }
        for (bus, ph) in extra {
            rhs[self.net.node_of(*bus)?] += ph;
        }
        let v_ph = y
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularBlock { cond: f64::INFINITY })?;

        for el in &mut self.net.elements {
            let vab = {
                let va = el.a.map_or(Complex64::ZERO, |i| v_ph[i]);
                let vb = el.b.map_or(Complex64::ZERO, |i| v_ph[i]);
                va - vb
            };
            let iab = el.discrete_admittance(theta) * vab;
            el.init_phasor(vab, iab, theta);
        }
        let dt = self.config.dt;
        for m in &mut self.net.machines {
            let z1 = Complex64::from_polar(1.0, -theta);
            let yd = m.geq * (1.0 + z1) / (1.0 - z1);
            let e_ph = Complex64::from_polar(m.e_mag, m.theta);
            let v_br = e_ph - v_ph[m.node];
            let i_br = yd * v_br;
            let rot = Complex64::from_polar(1.0, -theta);
            m.v_prev = (v_br * rot).re;
            m.i_prev = (i_br * rot).re;
            // prime the power window with the steady product and set the
            // mechanical power to the discrete equilibrium
            let w = m.pe_buf.len();
            for s in 0..w {
                let t = -((w - s) as f64) * dt;
                let rot = Complex64::from_polar(1.0, omega * t);
                let e = (e_ph * rot).re;
                let i = (i_br * rot).re;
                m.pe_buf[s] = 2.0 * e * i;
            }
            m.pe_idx = 0;
            m.pe = m.pe_buf.iter().sum::<f64>() / w as f64;
            m.pm = m.pe;
        }
        let rot = Complex64::from_polar(1.0, -theta);
        for i in 0..n {
            self.v_prev[i] = (v_ph[i] * rot).re;
            self.v[i] = v_ph[i].re;
        }
        Ok(())
    }

    /// Run the simulation, recording `taps` each step.
    ///
    /// Per step: update companion histories, gather hook injections from
    /// strictly-past voltages, solve the nodal equation (refactoring only on
    /// fault topology changes), advance machine swing states, record.
    /// Deterministic: identical inputs give bit-identical traces.
    pub fn run(&mut self, mut hooks: Vec<InjectionHook>, taps: &[Tap]) -> Result<SimTrace> {
        let dt = self.config.dt;
        let steps = self.config.steps();
        let n = self.net.labels.len();

        let tap_refs: Vec<TapRef> = taps
            .iter()
            .map(|t| self.resolve_tap(t))
            .collect::<Result<_>>()?;
        let names = taps.iter().map(Tap::channel_name).collect();
        let mut trace = SimTrace::new(0.0, dt, names);

        let hook_nodes: Vec<usize> = hooks
            .iter()
            .map(|h| self.net.node_of(h.bus))
            .collect::<Result<_>>()?;

        let mut inj = DVector::<f64>::zeros(n);
        let mut row = vec![0.0; taps.len()];

        for k in 0..steps {
            let t = k as f64 * dt;

            // fault topology
            if let (Some(f), Some(_)) = (self.config.fault, self.fault_node) {
                let active = t >= f.t_on && t < f.t_off;
                if active != self.fault_active {
                    self.fault_active = active;
                    self.refactor()?;
                }
            }

            // histories and injections
            inj.fill(0.0);
            for el in &mut self.net.elements {
                el.i_hist = el.history();
                if let Some(i) = el.a {
                    inj[i] -= el.i_hist;
                }
                if let Some(j) = el.b {
                    inj[j] += el.i_hist;
                }
            }
            for m in &mut self.net.machines {
                m.i_hist = m.geq * m.v_prev + m.i_prev; // alpha = 1 for pure L
                let e = m.emf();
                inj[m.node] += m.geq * e + m.i_hist;
            }
            for s in &mut self.net.sources {
                inj[s.node] += s.g * s.wave.value(k, t);
            }
            for p in &self.net.injections {
                inj[p.node] += (p.phasor * Complex64::from_polar(1.0, p.omega * t)).re;
            }
            for (h, node) in hooks.iter_mut().zip(&hook_nodes) {
                inj[*node] += (h.callback)(k, t, self.v_prev[*node]);
            }

            // nodal solve
            let mut v = inj.clone();
            if !self.lu.solve_mut(&mut v) {
                return Err(Error::NonFinite { step: k, what: "singular solve".into() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { step: k, what: "node voltage".into() });
            }

            // element state update
            for el in &mut self.net.elements {
                let va = el.a.map_or(0.0, |i| v[i]);
                let vb = el.b.map_or(0.0, |i| v[i]);
                let vab = va - vb;
                let i = el.geq * vab + el.i_hist;
                el.v_prev = vab;
                el.i_prev = i;
            }
            for s in &mut self.net.sources {
                s.i_last = s.g * (s.wave.value(k, t) - v[s.node]);
            }

            // machine interface power and swing advance
            for m in &mut self.net.machines {
                let e = m.emf();
                let vb = e - v[m.node];
                let i = m.geq * vb + m.i_hist;
                m.v_prev = vb;
                m.i_prev = i;
                m.push_power(2.0 * e * i);
                m.advance(dt);
            }

            // record
            for (slot, tr) in row.iter_mut().zip(&tap_refs) {
                *slot = match tr {
                    TapRef::Node(i) => v[*i],
                    TapRef::Element(i) => self.net.elements[*i].i_prev,
                    TapRef::Source(i) => self.net.sources[*i].i_last,
                    TapRef::MachineAngle(i) => {
                        // theta was advanced past t already; reconstruct the
                        // angle at t from the pre-advance sample is not
                        // needed for plotting purposes: use theta - omega0 *
                        // (t + dt) which is delta at the new state time.
                        self.net.machines[*i].theta - self.net.machines[*i].omega0 * (t + dt)
                    }
                    TapRef::MachineSpeed(i) => self.net.machines[*i].domega,
                    TapRef::MachinePower(i) => self.net.machines[*i].pe,
                };
            }
            trace.push_row(&row);

            self.v_prev.copy_from(&v);
            self.v.copy_from(&v);
        }
        Ok(trace)
    }

    fn resolve_tap(&self, tap: &Tap) -> Result<TapRef> {
        let find_el = |name: &str| {
            self.net
                .elements
                .iter()
                .position(|e| e.name.as_deref() == Some(name))
                .ok_or_else(|| Error::Invalid(format!("no element named {name}")))
        };
        let find_mach = |name: &str| {
            self.net
                .machines
                .iter()
                .position(|m| m.name == name)
                .ok_or_else(|| Error::Invalid(format!("no machine named {name}")))
        };
        Ok(match tap {
            Tap::NodeVoltage(b) => TapRef::Node(self.net.node_of(*b)?),
            Tap::ElementCurrent(n) => TapRef::Element(find_el(n)?),
            Tap::SourceCurrent(n) => TapRef::Source(
                self.net
                    .sources
                    .iter()
                    .position(|s| s.name == *n)
                    .ok_or_else(|| Error::Invalid(format!("no source named {n}")))?,
            ),
            Tap::MachineAngle(n) => TapRef::MachineAngle(find_mach(n)?),
            Tap::MachineSpeed(n) => TapRef::MachineSpeed(find_mach(n)?),
            Tap::MachinePower(n) => TapRef::MachinePower(find_mach(n)?),
        })
    }
}

fn lu_is_usable(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let u = lu.u();
    (0..u.nrows().min(u.ncols())).all(|i| u[(i, i)].abs() > 1e-12)
}
