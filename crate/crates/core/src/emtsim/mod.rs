//! Fixed-step discrete-time EMT solver: balanced positive-sequence,
//! single-phase equivalent. Trapezoidal companion models for R/L/C branches,
//! classical synchronous machines, shunt faults, and current-injection hooks
//! through which FDNE and TSA equivalents couple in.
//!
//! Instantaneous quantities use the peak convention: a bus at 1 pu, 0 rad in
//! the phasor domain carries `v(t) = cos(omega0 t)`.

mod assemble;
mod network;

pub use assemble::{build_network, check_operating_point, run_case, steady_state_init, AssembleOptions, MachineMode};
pub use network::{Network, Solver, Tap, GROUND};

use crate::casefile::BusId;
use crate::{Error, Result};

/// Shunt fault: `conductance` siemens (pu) inserted at `bus` over
/// `[t_on, t_off)`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FaultSpec {
    pub bus: BusId,
    pub t_on: f64,
    pub t_off: f64,
    pub conductance: f64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// EMT step, seconds.
    pub dt: f64,
    pub duration: f64,
    /// Base frequency, Hz.
    pub f0: f64,
    pub fault: Option<FaultSpec>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-4) {
            return Err(Error::Invalid(format!(
                "EMT step {} s outside (0, 1e-4]",
                self.dt
            )));
        }
        if self.duration <= 0.0 || self.f0 <= 0.0 {
            return Err(Error::Invalid("duration and f0 must be positive".into()));
        }
        if let Some(f) = &self.fault {
            if !(f.t_on < f.t_off && f.t_off <= self.duration) {
                return Err(Error::Invalid("fault window must satisfy t_on < t_off <= duration".into()));
            }
            if f.conductance <= 0.0 {
                return Err(Error::Invalid("fault conductance must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0
    }
}

/// Current injection into a bus, evaluated once per step with strictly-past
/// voltage data: the callback receives `(k, t_k, v(k-1))` of the target bus
/// and returns the current injected at step k.
pub struct InjectionHook {
    pub bus: BusId,
    pub callback: Box<dyn FnMut(usize, f64, f64) -> f64>,
}

impl InjectionHook {
    pub fn new(bus: BusId, callback: impl FnMut(usize, f64, f64) -> f64 + 'static) -> Self {
        Self { bus, callback: Box::new(callback) }
    }
}

/// Uniformly sampled named signal channels on a shared time base.
#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub t0: f64,
    pub dt: f64,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl SimTrace {
    pub fn new(t0: f64, dt: f64, names: Vec<String>) -> Self {
        let mut unique = std::collections::HashSet::new();
        for n in &names {
            assert!(unique.insert(n.clone()), "duplicate channel name {n}");
        }
        let data = names.iter().map(|_| Vec::new()).collect();
        Self { t0, dt, names, data }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.names.len());
        for (c, v) in self.data.iter_mut().zip(row) {
            c.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    /// CSV with a leading time column and one column per channel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{:.9}", self.time(i)));
            for c in &self.data {
                out.push_str(&format!(",{:.12e}", c[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests;
