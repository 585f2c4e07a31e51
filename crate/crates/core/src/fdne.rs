//! Frequency-dependent network equivalent: a strictly proper discrete-time
//! admittance `I(z)/V(z) = (b1 z^-1 + .. + bn z^-n)/(1 + a1 z^-1 + .. + an z^-n)`
//! run as a difference equation, plus the hook that couples it into the EMT
//! solver with a one-step interface delay.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

use crate::casefile::BusId;
use crate::emtsim::InjectionHook;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FdneCoefficients {
    pub order: usize,
    /// Sample interval the coefficients were identified at. The model is
    /// only valid when run at this step.
    pub dt_s: f64,
    /// Boundary bus the admittance is seen from.
    pub port: BusId,
    /// Denominator coefficients `a1..an`.
    pub a: Vec<f64>,
    /// Numerator coefficients `b1..bn`. The missing `b0` makes the model
    /// strictly proper, which is what permits delay-free network coupling.
    pub b: Vec<f64>,
    /// Shunt capacitance sitting directly on the port, carried outside the
    /// rational part. A delay-free conductance of `2C/dt` cannot live in a
    /// strictly proper model, so it is stamped as a physical capacitor in
    /// reduced runs instead.
    #[serde(default)]
    pub port_capacitance: f64,
    /// Series R-L-C damping branch stamped next to the model at the port.
    /// It is not part of the identified admittance: it exists to absorb
    /// the out-of-band resonances neither side of the interface damps,
    /// which the one-step-delay replay would otherwise turn into an
    /// unstable feedback loop. Zero capacitance means no branch.
    #[serde(default)]
    pub damping_r: f64,
    #[serde(default)]
    pub damping_l: f64,
    #[serde(default)]
    pub damping_c: f64,
}

impl FdneCoefficients {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.a.len() != self.order || self.b.len() != self.order {
            return Err(Error::Invalid(format!(
                "coefficient vectors must both have length order={} (got a: {}, b: {})",
                self.order,
                self.a.len(),
                self.b.len()
            )));
        }
        if self.dt_s <= 0.0 {
            return Err(Error::Invalid("dt_s must be positive".into()));
        }
        if self.a.iter().chain(self.b.iter()).any(|c| !c.is_finite()) {
            return Err(Error::Invalid("coefficients must be finite".into()));
        }
        if !(self.port_capacitance >= 0.0 && self.port_capacitance.is_finite()) {
            return Err(Error::Invalid(
                "port_capacitance must be finite and non-negative".into(),
            ));
        }
        let d = [self.damping_r, self.damping_l, self.damping_c];
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || (self.damping_c > 0.0 && (self.damping_r <= 0.0 || self.damping_l <= 0.0))
        {
            return Err(Error::Invalid(
                "damping branch must have non-negative values and, when present, positive R and L"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Moduli of the denominator roots, via the companion matrix of
    /// `z^n + a1 z^(n-1) + .. + an`.
    pub fn pole_moduli(&self) -> Vec<f64> {
        let n = self.order;
        let mut c = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            c[(0, i)] = -self.a[i];
        }
        for i in 1..n {
            c[(i, i - 1)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|e| e.norm()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.pole_moduli().iter().all(|m| *m < 1.0)
    }

    pub fn check_stable(&self) -> Result<()> {
        let worst = self.pole_moduli().into_iter().fold(0.0_f64, f64::max);
        if worst >= 1.0 {
            return Err(Error::UnstableModel { modulus: worst });
        }
        Ok(())
    }

    /// Admittance at frequency `f_hz`, evaluated on the unit circle at
    /// `z = e^(j 2 pi f dt)`.
    pub fn eval_y(&self, f_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -std::f64::consts::TAU * f_hz * self.dt_s);
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = Complex64::new(1.0, 0.0);
        let mut zk = Complex64::new(1.0, 0.0);
        for i in 0..self.order {
            zk *= z_inv;
            num += self.b[i] * zk;
            den += self.a[i] * zk;
        }
        num / den
    }

    /// Port admittance including the separately carried shunt capacitance.
    /// This is what should be compared against frequency sweeps of the
    /// full network. The damping branch is deliberately excluded: it is an
    /// attachment artifact, not part of the modeled external area.
    pub fn eval_total(&self, f_hz: f64) -> Complex64 {
        self.eval_y(f_hz)
            + Complex64::new(0.0, std::f64::consts::TAU * f_hz * self.port_capacitance)
    }

    /// Admittance of the damping branch, zero when absent. Reduced runs
    /// fold its draw at the fundamental into the steady bookkeeping.
    pub fn damping_admittance(&self, f_hz: f64) -> Complex64 {
        if self.damping_c == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let w = std::f64::consts::TAU * f_hz;
        Complex64::new(self.damping_r, w * self.damping_l - 1.0 / (w * self.damping_c)).inv()
    }

    /// Total admittance seen at the attachment point in a reduced run:
    /// model, carried capacitance and damping branch together.
    pub fn terminal_admittance(&self, f_hz: f64) -> Complex64 {
        self.eval_total(f_hz) + self.damping_admittance(f_hz)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = toml::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let c: Self = toml::from_str(&text).map_err(|e| Error::CaseFormat(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// Difference-equation state of one running equivalent.
#[derive(Debug, Clone)]
pub struct FdneRuntime {
    coeffs: FdneCoefficients,
    /// Past port currents, most recent first.
    i_hist: VecDeque<f64>,
    /// Past port voltages, most recent first.
    v_hist: VecDeque<f64>,
}

impl FdneRuntime {
    pub fn new(coeffs: FdneCoefficients) -> Result<Self> {
        coeffs.validate()?;
        coeffs.check_stable()?;
        let n = coeffs.order;
        Ok(Self {
            coeffs,
            i_hist: VecDeque::from(vec![0.0; n]),
            v_hist: VecDeque::from(vec![0.0; n]),
        })
    }

    pub fn coefficients(&self) -> &FdneCoefficients {
        &self.coeffs
    }

    /// Advance one step. The argument is the newest available port voltage,
    /// which in the solver coupling is the previous step's sample v(k-1);
    /// the returned current is i(k). Strict properness is what makes this
    /// causal: i(k) never needs v(k).
    pub fn step(&mut self, v: f64) -> f64 {
        let n = self.coeffs.order;
        self.v_hist.push_front(v);
        let mut i = 0.0;
        for k in 0..n {
            i += -self.coeffs.a[k] * self.i_hist[k] + self.coeffs.b[k] * self.v_hist[k];
        }
        self.v_hist.pop_back();
        self.i_hist.push_front(i);
        self.i_hist.pop_back();
        i
    }

    /// Fill the histories with the periodic steady state reached under
    /// `v(t) = |V| cos(w t + arg V)`, so a simulation that starts from a
    /// sinusoidal operating point sees no startup transient from the
    /// equivalent. The state is left ready for a first `step` call that
    /// supplies v(-dt) and returns i(0): current history holds
    /// i(-dt)..i(-n dt), voltage history holds v(-2 dt)..v(-(n+1) dt).
    pub fn prime_sinusoid(&mut self, v_phasor: Complex64, omega: f64) {
        let dt = self.coeffs.dt_s;
        let f = omega / std::f64::consts::TAU;
        let i_phasor = self.coeffs.eval_y(f) * v_phasor;
        for k in 0..self.coeffs.order {
            let tv = -((k + 2) as f64) * dt;
            let ti = -((k + 1) as f64) * dt;
            self.v_hist[k] = (v_phasor * Complex64::from_polar(1.0, omega * tv)).re;
            self.i_hist[k] = (i_phasor * Complex64::from_polar(1.0, omega * ti)).re;
        }
    }

    pub fn last_current(&self) -> f64 {
        self.i_hist[0]
    }
}

/// Injection hook for the EMT solver: at each step the equivalent consumes
/// the previous boundary voltage and injects the negative of its port
/// current (current drawn by the replaced external area leaves the bus).
pub fn make_injector(runtime: FdneRuntime) -> InjectionHook {
    let port = runtime.coeffs.port;
    let mut rt = runtime;
    InjectionHook::new(port, move |_k, _t, v_prev| -rt.step(v_prev))
}
