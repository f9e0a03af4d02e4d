//! Subcommand implementations. Each returns a value as well as writing its
//! files so the same code paths can be driven from tests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use banditcat::calibration::{project_bank, CalibratedBank, CalibrationModel, FitReport};
use banditcat::formats;
use banditcat::metrics;
use banditcat::simulation::{
    simulate_nn, simulate_synthetic, standard_normal_thetas, synthetic_bank, tune_gamma, HistoricalSession,
    TuneResult,
};
use banditcat::{ItemBank, SimulationReport};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {what} {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let wrap = |source| CliError::Output {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, bytes).map_err(wrap)
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Bookkeeping written next to a deterministic report. The timestamp lives
/// here so the report file itself stays byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub seed: Option<u64>,
    /// SHA-256 of the report file's bytes.
    pub determinism_hash: String,
    pub generated_at: u64,
    pub files: Vec<String>,
}

fn write_run_record(out: &Path, command: &str, seed: Option<u64>, report: &[u8], files: &[&str]) -> Result<String, CliError> {
    let hash = sha256_hex(report);
    let record = RunRecord {
        command: command.into(),
        seed,
        determinism_hash: hash.clone(),
        generated_at: unix_now(),
        files: files.iter().map(|f| f.to_string()).collect(),
    };
    write_file(&out.join("run.json"), &pretty(&record))?;
    Ok(hash)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFit {
    pub item_id: String,
    #[serde(flatten)]
    pub report: FitReport,
}

#[derive(Debug, Clone)]
pub struct CalibrateOutcome {
    pub bank: CalibratedBank,
    pub bank_path: PathBuf,
}

/// Fits every surface and writes `bank.json` plus `calibration.json`.
pub fn calibrate(cfg: &RunConfig, surfaces: Option<&Path>, model: Option<CalibrationModel>) -> Result<CalibrateOutcome, CliError> {
    let path = surfaces
        .or(cfg.paths.surfaces.as_deref())
        .ok_or_else(|| CliError::Input("no surfaces file given".into()))?;
    let surfaces = formats::read_surfaces(open(path, "surfaces")?)?;
    if surfaces.is_empty() {
        return Err(CliError::Input(format!("surfaces file {} holds no surfaces", path.display())));
    }
    let mut engine = cfg.calibration.engine();
    if let Some(m) = model {
        engine.model = m;
    }
    info!("calibrating {} items with {:?}", surfaces.len(), engine.model);
    let calibrated = project_bank(&surfaces, &engine)?;
    let s = &calibrated.summary;
    for w in &s.warnings {
        warn!("{w}");
    }
    let bank = ItemBank::new(calibrated.items.clone())?;
    let out = cfg.out_dir();
    let bank_path = out.join("bank.json");
    let mut bank_json = formats::bank_to_json(&bank)?.into_bytes();
    bank_json.push(b'\n');
    write_file(&bank_path, &bank_json)?;
    let fits: Vec<ItemFit> = calibrated
        .reports
        .iter()
        .map(|r| ItemFit {
            item_id: r.item_id.clone(),
            report: r.report.clone(),
        })
        .collect();
    let doc = serde_json::json!({ "summary": s, "items": fits });
    write_file(&out.join("calibration.json"), &pretty(&doc))?;

    let unconverged = s.items - s.converged;
    if unconverged as f64 > cfg.calibration.max_unconverged * s.items as f64 {
        return Err(CliError::NotConverged {
            unconverged,
            total: s.items,
            allowed: cfg.calibration.max_unconverged,
        });
    }
    Ok(CalibrateOutcome {
        bank: calibrated,
        bank_path,
    })
}

/// The item bank named by the config: a file, or a synthetic bank generated
/// from the master seed.
pub fn load_bank(cfg: &RunConfig) -> Result<ItemBank, CliError> {
    if let Some(path) = &cfg.paths.bank {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read bank {}: {e}", path.display())))?;
        return formats::parse_bank(&text).map_err(|e| CliError::Input(format!("bank {}: {e}", path.display())));
    }
    if let Some(spec) = &cfg.simulation.synthetic_bank {
        return Ok(ItemBank::new(synthetic_bank(spec, cfg.require_seed()?)?)?);
    }
    Err(CliError::Input("no bank: set paths.bank or simulation.synthetic_bank".into()))
}

fn load_history(cfg: &RunConfig) -> Result<Option<Vec<HistoricalSession>>, CliError> {
    match &cfg.paths.history {
        Some(p) => Ok(Some(formats::read_history(open(p, "history")?)?)),
        None => Ok(None),
    }
}

/// Everything a simulation needs, loaded once so repeated runs (the gamma
/// tuner) do not re-read files.
pub struct SimulationInputs {
    pub seed: u64,
    pub bank: ItemBank,
    pub history: Option<Vec<HistoricalSession>>,
    pub targets: Vec<f64>,
}

impl SimulationInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let seed = cfg.require_seed()?;
        let bank = load_bank(cfg)?;
        cfg.blueprint.validate(&bank)?;
        let history = load_history(cfg)?;
        let targets = match &history {
            Some(h) => {
                let n = cfg.simulation.sessions.unwrap_or(h.len()).min(h.len());
                h[..n].iter().map(|s| s.proxy_theta).collect()
            }
            None => standard_normal_thetas(cfg.simulation.sessions.unwrap_or(1000), seed),
        };
        Ok(Self {
            seed,
            bank,
            history,
            targets,
        })
    }

    /// Runs one simulation with the config's settings, overriding gamma when given.
    pub fn run(&self, cfg: &RunConfig, gamma: Option<f64>) -> banditcat::Result<SimulationReport> {
        let seed = self.seed;
        let mut sim = cfg.simulation();
        if let Some(g) = gamma {
            sim.session.selector.gamma = g;
        }
        match &self.history {
            Some(h) => simulate_nn(h, &self.targets, &cfg.blueprint, &self.bank, &sim, seed),
            None => simulate_synthetic(&self.targets, &cfg.blueprint, &self.bank, &sim, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub report: SimulationReport,
    pub report_path: PathBuf,
    pub determinism_hash: String,
}

/// Runs the simulator and writes `report.json`, `run.json` and `exposure.csv`.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutcome, CliError> {
    let inputs = SimulationInputs::load(cfg)?;
    info!(
        "simulating {} sessions over {} items ({})",
        inputs.targets.len(),
        inputs.bank.len(),
        if inputs.history.is_some() { "nearest-neighbour grades" } else { "synthetic grades" }
    );
    let report = inputs.run(cfg, None)?;
    if report.donor_fallbacks > 0 {
        warn!("{} grades fell back to the response function", report.donor_fallbacks);
    }
    let out = cfg.out_dir();
    let report_path = out.join("report.json");
    let bytes = pretty(&report);
    write_file(&report_path, &bytes)?;
    let mut files = vec!["report.json"];
    if cfg.metrics.exposure_csv {
        write_file(&out.join("exposure.csv"), formats::exposure_csv(&report).as_bytes())?;
        files.push("exposure.csv");
    }
    let determinism_hash = write_run_record(&out, "simulate", cfg.seed, &bytes, &files)?;
    Ok(SimulateOutcome {
        report,
        report_path,
        determinism_hash,
    })
}

/// Smallest exposure any item type can reach: one over its item count.
fn exposure_floor(cfg: &RunConfig, bank: &ItemBank) -> f64 {
    cfg.blueprint
        .stages
        .iter()
        .map(|s| 1.0 / bank.count_of_type(&s.item_type).max(1) as f64)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub target: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub result: TuneResult,
}

/// Bisects gamma so the simulated maximum exposure meets `target`, reusing
/// the master seed for every arm. Writes `tune.json`.
pub fn tune(cfg: &RunConfig, target: Option<f64>) -> Result<TuneOutcome, CliError> {
    let target = target
        .or(cfg.tune.target)
        .ok_or_else(|| CliError::Input("no exposure target (tune.target or --target)".into()))?;
    let inputs = SimulationInputs::load(cfg)?;
    if inputs.targets.is_empty() {
        return Err(CliError::Input("tuning needs at least one simulated session".into()));
    }
    let floor = exposure_floor(cfg, &inputs.bank);
    let result = tune_gamma(target, floor, &cfg.tune.options(), |g| {
        let r = inputs.run(cfg, Some(g))?;
        let (e, item) = r.max_exposure()?;
        info!("gamma {g:.6}: max exposure {e:.5} ({item})");
        Ok(e)
    })?;
    let outcome = TuneOutcome {
        target,
        seed: inputs.seed,
        result,
    };
    write_file(&cfg.out_dir().join("tune.json"), &pretty(&outcome))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetestMetrics {
    pub pairs: usize,
    pub retest_reliability: Option<f64>,
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sessions: usize,
    pub per_type: BTreeMap<String, banditcat::simulation::TypeMetrics>,
    /// Present when a second report is paired with the first by session id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub retest: BTreeMap<String, RetestMetrics>,
}

pub fn read_report(path: &Path) -> Result<SimulationReport, CliError> {
    serde_json::from_reader(open(path, "report")?)
        .map_err(|e| CliError::Input(format!("report {}: {e}", path.display())))
}

/// Summarizes a report; with a second report, pairs sessions by id and
/// computes retest reliability and SEM per item type.
pub fn summarize(first: &SimulationReport, second: Option<&SimulationReport>) -> Result<MetricsSummary, CliError> {
    let mut retest = BTreeMap::new();
    if let Some(second) = second {
        let by_id: BTreeMap<&str, _> = second.sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
        for ty in first.metrics.keys() {
            let pairs: Vec<(f64, f64)> = first
                .sessions
                .iter()
                .filter_map(|s| Some((*s.scores.get(ty)?, *by_id.get(s.session_id.as_str())?.scores.get(ty)?)))
                .collect();
            let rr = metrics::retest_reliability(&pairs).ok();
            let sd = metrics::sample_sd(&first.scores_for(ty));
            let sem = match (rr, sd) {
                (Some(rr), Some(sd)) => metrics::sem(rr.max(0.0), sd).ok(),
                _ => None,
            };
            retest.insert(
                ty.clone(),
                RetestMetrics {
                    pairs: pairs.len(),
                    retest_reliability: rr,
                    sem,
                },
            );
        }
    }
    Ok(MetricsSummary {
        sessions: first.sessions.len(),
        per_type: first.metrics.clone(),
        retest,
    })
}

/// `metrics` subcommand: writes `metrics.json` into the output directory.
pub fn metrics_cmd(report: &Path, retest: Option<&Path>, out: &Path) -> Result<MetricsSummary, CliError> {
    let first = read_report(report)?;
    let second = retest.map(read_report).transpose()?;
    let summary = summarize(&first, second.as_ref())?;
    write_file(&out.join("metrics.json"), &pretty(&summary))?;
    Ok(summary)
}
