//! Reduced-order modeling of power grids for electromagnetic-transient studies.
//!
//! The crate reduces an "external" network area to a hybrid equivalent: a
//! transient-stability (TSA) phasor model in parallel with a frequency
//! dependent network equivalent (FDNE) identified online by recursive least
//! squares, and quantifies how faithfully each reduced variant reproduces the
//! full model's fault response.
//!
//! Module map:
//! - [`casefile`]: case ingestion (buses, branches, generators, loads, area
//!   partition) from a TOML document.
//! - [`netmodel`]: complex nodal admittance assembly, Kron elimination, and
//!   analytic frequency-swept port admittances.
//! - [`emtsim`]: fixed-step trapezoidal EMT solver (balanced positive-sequence
//!   single-phase equivalent) with current-injection hooks.
//! - [`rlsident`]: recursive least-squares identification of the z-domain port
//!   admittance, plus the batch least-squares oracle and probe generation.
//! - [`fdne`]: the identified admittance as a runtime difference equation and
//!   as an injection hook.
//! - [`tsaequiv`]: inertial generator aggregation, the two-bus phasor network,
//!   phasor extraction, and the boundary-current recursion.
//! - [`scenarios`]: the four-variant fault experiment and its comparison
//!   metrics.

pub mod casefile;
pub mod emtsim;
mod error;
pub mod fdne;
pub mod netmodel;
pub mod rlsident;
pub mod scenarios;
pub mod tsaequiv;

/// Bundled benchmark cases.
pub mod cases {
    use crate::casefile::CaseFile;

    /// Four-machine two-area benchmark, TOML source.
    pub const KUNDUR_TWO_AREA: &str = include_str!("../../../cases/kundur-two-area.toml");

    pub fn kundur_two_area() -> CaseFile {
        CaseFile::from_str(KUNDUR_TWO_AREA).expect("bundled case is valid")
    }
}

pub use casefile::{BusId, CaseFile};
pub use emtsim::{InjectionHook, SimConfig, SimTrace};
pub use error::{Error, Result};
pub use fdne::FdneCoefficients;
pub use netmodel::ComplexMatrix;
pub use rlsident::{ProbeConfig, RlsState};
pub use tsaequiv::Phasor;
