//! Run manifest: everything a comparison run needs, in one TOML document,
//! so a result can be reproduced from the manifest alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gridequiv::scenarios::ScenarioConfig;
use gridequiv::{BusId, Error};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Case file the run operates on.
    pub case: PathBuf,
    /// Artifact directory, relative to the working directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Probe RNG seed.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub params: Params,
}

/// Optional scenario overrides; anything absent keeps the built-in default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Params {
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub fault_bus: Option<u32>,
    pub fault_on: Option<f64>,
    pub fault_off: Option<f64>,
    pub fault_conductance: Option<f64>,
    /// Identified model order.
    pub order: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = toml::from_str(&text)
            .map_err(|e| Error::Invalid(format!("manifest {}: {e}", path.display())))?;
        if !m.case.exists() {
            return Err(Error::Invalid(format!(
                "manifest references missing case file {}",
                m.case.display()
            )));
        }
        Ok(m)
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        if let Some(v) = self.params.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.params.duration {
            cfg.duration = v;
        }
        if let Some(v) = self.params.fault_bus {
            cfg.fault.bus = BusId(v);
        }
        if let Some(v) = self.params.fault_on {
            cfg.fault.t_on = v;
        }
        if let Some(v) = self.params.fault_off {
            cfg.fault.t_off = v;
        }
        if let Some(v) = self.params.fault_conductance {
            cfg.fault.conductance = v;
        }
        cfg
    }
}
