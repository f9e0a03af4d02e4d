//! The run configuration: one JSON document shared by every subcommand.

use std::path::{Path, PathBuf};

use banditcat::calibration::{CalibrationConfig, CalibrationModel, ParamBounds};
use banditcat::irt::ThetaGrid;
use banditcat::simulation::{SyntheticBankSpec, TuneOptions};
use banditcat::{Blueprint, PriorSpec, SelectorConfig, SessionConfig, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub bank: Option<PathBuf>,
    pub surfaces: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub model: CalibrationModel,
    pub bounds: ParamBounds,
    pub multistart: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Largest tolerated fraction of items whose fit did not converge.
    pub max_unconverged: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        Self {
            model: c.model,
            bounds: c.bounds,
            multistart: c.multistart,
            tolerance: c.tolerance,
            max_iterations: c.max_iterations,
            max_unconverged: 0.05,
        }
    }
}

impl CalibrationSettings {
    pub fn engine(&self) -> CalibrationConfig {
        CalibrationConfig {
            model: self.model,
            bounds: self.bounds,
            multistart: self.multistart,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    /// Number of simulated takers. With a history file, the first `sessions`
    /// historical takers are replayed (all of them when unset); otherwise
    /// abilities are drawn from N(0, 1) and the default is 1000.
    pub sessions: Option<usize>,
    /// Generate the bank instead of reading `paths.bank`.
    pub synthetic_bank: Option<SyntheticBankSpec>,
    pub donor_fallback: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            sessions: None,
            synthetic_bank: None,
            donor_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub target: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl Default for TuneSettings {
    fn default() -> Self {
        let o = TuneOptions::default();
        Self {
            target: None,
            lo: o.lo,
            hi: o.hi,
            iterations: o.iterations,
        }
    }
}

impl TuneSettings {
    pub fn options(&self) -> TuneOptions {
        TuneOptions {
            lo: self.lo,
            hi: self.hi,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    /// Simulate a second sitting per taker and report retest reliability and SEM.
    pub retest: bool,
    pub exposure_csv: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            retest: false,
            exposure_csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. There is no wall-clock fallback.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub grid: ThetaGrid,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default = "Blueprint::vocabulary")]
    pub blueprint: Blueprint,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub tune: TuneSettings,
    #[serde(default)]
    pub metrics: MetricToggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            paths: Paths::default(),
            grid: ThetaGrid::default(),
            prior: PriorSpec::default(),
            selector: SelectorConfig::default(),
            blueprint: Blueprint::vocabulary(),
            calibration: CalibrationSettings::default(),
            simulation: SimulationSettings::default(),
            tune: TuneSettings::default(),
            metrics: MetricToggles::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory, and every referenced input must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.check_inputs()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.bank, &mut p.surfaces, &mut p.history, &mut p.out_dir] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn check_inputs(&self) -> Result<(), CliError> {
        let p = &self.paths;
        for (what, path) in [("bank", &p.bank), ("surfaces", &p.surfaces), ("history", &p.history)] {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(CliError::Input(format!("{what} file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Input("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            grid: self.grid,
            prior: self.prior,
            selector: self.selector,
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            session: self.session(),
            retest: self.metrics.retest,
            donor_fallback: self.simulation.donor_fallback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.require_seed().is_err());
        assert_eq!(cfg.blueprint.total_items(), 27);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"paths": {"bnak": "x"}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = std::env::temp_dir().join(format!("banditcat-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("bank.json"), "[]").unwrap();
        let cfg_path = dir.join("run.json");
        std::fs::write(&cfg_path, r#"{"seed": 1, "paths": {"bank": "bank.json", "out_dir": "out"}}"#).unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.paths.bank.as_deref(), Some(dir.join("bank.json").as_path()));
        assert_eq!(cfg.out_dir(), dir.join("out"));

        std::fs::write(&cfg_path, r#"{"seed": 1, "paths": {"history": "missing.jsonl"}}"#).unwrap();
        assert!(matches!(RunConfig::load(&cfg_path), Err(CliError::Input(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
