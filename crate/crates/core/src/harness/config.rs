//! Experiment configuration, read from TOML.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::channel::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{angles_from_geometry, toas_from_geometry, ArrayLayout, ScenarioGeometry, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepConfig,
    pub stages: StageToggles,
    pub scenario: ScenarioConfig,
    pub arrays: ArrayConfig,
    pub system: SystemConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            stages: StageToggles::default(),
            scenario: ScenarioConfig::default(),
            arrays: ArrayConfig::default(),
            system: SystemConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub powers_dbm: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            powers_dbm: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 200,
            master_seed: 1,
        }
    }
}

/// Which pipeline stages run. With everything off only the grid-based coarse
/// estimate and the closed-form position are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub aod_mle: bool,
    pub sage: bool,
    pub lm: bool,
    /// Skip the receiver noise.
    pub noiseless: bool,
    /// Move the MS and scatterers so every angle sits on a dictionary grid point.
    pub on_grid: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            aod_mle: true,
            sage: true,
            lm: true,
            noiseless: false,
            on_grid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs: [f64; 3],
    pub ris: [f64; 3],
    pub ms: [f64; 3],
    pub alpha_deg: f64,
    pub scatterers: Vec<[f64; 3]>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0, 28.0],
            ris: [-6.0, 8.0, 20.0],
            ms: [22.0, 35.0, 1.5],
            alpha_deg: 75.0,
            scatterers: vec![[6.0, 5.0, 3.0]],
        }
    }
}

/// Array sizes; spacings are in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_b: usize,
    pub n_m: usize,
    pub n_a: usize,
    pub n_e: usize,
    pub d_bs: f64,
    pub d_ms: f64,
    pub d_ris_a: f64,
    pub d_ris_e: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_b: 40,
            n_m: 16,
            n_a: 10,
            n_e: 10,
            d_bs: 0.5,
            d_ms: 0.5,
            d_ris_a: 1.0 / 3.0,
            d_ris_e: 1.0 / 3.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn n_paths(&self) -> usize {
        self.scenario.scatterers.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep.powers_dbm.is_empty() {
            return Err(Error::Config("powers_dbm must not be empty".into()));
        }
        if self.sweep.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("powers_dbm must be finite".into()));
        }
        self.system.validate(self.n_paths())?;
        let g = self.geometry();
        g.validate()?;
        toas_from_geometry(&g)?;
        angles_from_geometry(&g)?;
        Ok(())
    }

    pub fn array_layout(&self) -> ArrayLayout<f64> {
        let lam = self.system.wavelength();
        let a = &self.arrays;
        ArrayLayout {
            n_b: a.n_b,
            n_m: a.n_m,
            n_a: a.n_a,
            n_e: a.n_e,
            d_bs: a.d_bs * lam,
            d_ms: a.d_ms * lam,
            d_ris_a: a.d_ris_a * lam,
            d_ris_e: a.d_ris_e * lam,
            wavelength: lam,
        }
    }

    /// Geometry as configured, before any on-grid adjustment.
    pub fn geometry(&self) -> ScenarioGeometry<f64> {
        let s = &self.scenario;
        ScenarioGeometry {
            bs: Vec3::from_array(s.bs),
            ris: Vec3::from_array(s.ris),
            ms: Vec3::from_array(s.ms),
            alpha: s.alpha_deg.to_radians(),
            scatterers: s.scatterers.iter().map(|p| Vec3::from_array(*p)).collect(),
            arrays: self.array_layout(),
        }
    }
}
