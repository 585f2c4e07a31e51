//! Case ingestion: buses, branches, generators, loads, operating point and
//! the study/external partition, from a TOML document.
//!
//! All quantities are per-unit on the system MVA base except frequency (Hz),
//! inertia H (seconds) and generator ratings (MVA). Generator `xd_prime_pu`,
//! `inertia_s` and `damping_pu` are on the machine's own MVA base; terminal
//! `p_pu`/`q_pu` are on the system base.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bus identifier as it appears in the case document.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    /// Operating-point voltage magnitude, pu.
    pub voltage_pu: f64,
    /// Operating-point voltage angle, rad.
    pub angle_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    /// Series resistance, pu.
    pub r_pu: f64,
    /// Series reactance at base frequency, pu.
    pub x_pu: f64,
    /// Total shunt charging susceptance, pu (half at each endpoint).
    #[serde(default)]
    pub b_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    /// Machine MVA rating.
    pub mva: f64,
    /// Inertia constant H, seconds, machine base.
    pub inertia_s: f64,
    /// Damping coefficient D, pu on machine base.
    #[serde(default)]
    pub damping_pu: f64,
    /// Transient reactance X'd, pu on machine base.
    pub xd_prime_pu: f64,
    /// Terminal active power at the operating point, pu system base.
    pub p_pu: f64,
    /// Terminal reactive power at the operating point, pu system base.
    pub q_pu: f64,
}

impl Generator {
    /// X'd converted to the system MVA base.
    pub fn xd_prime_system(&self, system_mva: f64) -> f64 {
        self.xd_prime_pu * system_mva / self.mva
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadModel {
    ConstantImpedance,
    ConstantCurrent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Load {
    pub bus: BusId,
    pub p_pu: f64,
    pub q_pu: f64,
    pub model: LoadModel,
}

/// Study/external split. `study`, `external` and the boundary bus are
/// disjoint and together cover every bus; the boundary bus is the interface
/// and belongs to neither area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub study: Vec<BusId>,
    pub external: Vec<BusId>,
    pub boundary: BusId,
    pub external_generators: Vec<BusId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub name: String,
    pub base_mva: f64,
    pub base_frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    pub partition: Partition,
}

impl CaseFile {
    pub fn from_str(text: &str) -> Result<Self> {
        let case: CaseFile =
            toml::from_str(text).map_err(|e| Error::CaseFormat(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("case serialization cannot fail")
    }

    /// Base angular frequency, rad/s.
    pub fn omega0(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.base_frequency_hz
    }

    pub fn bus(&self, id: BusId) -> Result<&Bus> {
        self.buses
            .iter()
            .find(|b| b.id == id)
            .ok_or(Error::UnknownBus(id))
    }

    /// Operating-point voltage phasor of a bus (peak convention, pu).
    pub fn voltage_phasor(&self, id: BusId) -> Result<Complex64> {
        let b = self.bus(id)?;
        Ok(Complex64::from_polar(b.voltage_pu, b.angle_rad))
    }

    pub fn generators_at(&self, id: BusId) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(move |g| g.bus == id)
    }

    /// Buses of the external area plus the boundary bus, in case order.
    pub fn external_with_boundary(&self) -> Vec<BusId> {
        let ext: HashSet<BusId> = self.partition.external.iter().copied().collect();
        self.buses
            .iter()
            .map(|b| b.id)
            .filter(|id| ext.contains(id) || *id == self.partition.boundary)
            .collect()
    }

    /// Buses of the study area plus the boundary bus, in case order.
    pub fn study_with_boundary(&self) -> Vec<BusId> {
        let study: HashSet<BusId> = self.partition.study.iter().copied().collect();
        self.buses
            .iter()
            .map(|b| b.id)
            .filter(|id| study.contains(id) || *id == self.partition.boundary)
            .collect()
    }

    /// External generators, in case order.
    pub fn external_generator_list(&self) -> Vec<&Generator> {
        self.generators
            .iter()
            .filter(|g| self.partition.external_generators.contains(&g.bus))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.base_mva <= 0.0 || self.base_frequency_hz <= 0.0 {
            return Err(Error::CaseInvariant("base_mva and base_frequency_hz must be positive".into()));
        }
        let ids: HashSet<BusId> = self.buses.iter().map(|b| b.id).collect();
        if ids.len() != self.buses.len() {
            return Err(Error::CaseInvariant("duplicate bus id".into()));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !ids.contains(&end) {
                    return Err(Error::UnknownBus(end));
                }
            }
            if !(br.r_pu.is_finite() && br.x_pu.is_finite() && br.b_pu.is_finite()) {
                return Err(Error::CaseInvariant(format!(
                    "branch {}-{} has non-finite parameters",
                    br.from, br.to
                )));
            }
            if br.r_pu == 0.0 && br.x_pu == 0.0 {
                return Err(Error::ZeroImpedanceBranch { from: br.from, to: br.to });
            }
        }
        for g in &self.generators {
            if !ids.contains(&g.bus) {
                return Err(Error::UnknownBus(g.bus));
            }
            if g.inertia_s <= 0.0 || g.xd_prime_pu <= 0.0 {
                return Err(Error::CaseInvariant(format!(
                    "generator at bus {}: H and X'd must be positive",
                    g.bus
                )));
            }
        }
        for l in &self.loads {
            if !ids.contains(&l.bus) {
                return Err(Error::UnknownBus(l.bus));
            }
        }
        let p = &self.partition;
        if !ids.contains(&p.boundary) {
            return Err(Error::UnknownBus(p.boundary));
        }
        let study: HashSet<BusId> = p.study.iter().copied().collect();
        let external: HashSet<BusId> = p.external.iter().copied().collect();
        if study.contains(&p.boundary) || external.contains(&p.boundary) {
            return Err(Error::CaseInvariant(
                "boundary bus must belong to neither area".into(),
            ));
        }
        if !study.is_disjoint(&external) {
            return Err(Error::CaseInvariant("study and external areas overlap".into()));
        }
        let mut covered = study.clone();
        covered.extend(&external);
        covered.insert(p.boundary);
        if covered != ids {
            return Err(Error::CaseInvariant(
                "study + external + boundary must cover all buses exactly".into(),
            ));
        }
        for g in &p.external_generators {
            if !external.contains(g) {
                return Err(Error::CaseInvariant(format!(
                    "external generator bus {g} is not in the external area"
                )));
            }
        }
        Ok(())
    }
}
